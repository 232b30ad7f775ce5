#include "ynet/service.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>

#include "ynet/dataset.hpp"
#include "ynet/errors.hpp"
#include "ynet/eval.hpp"
#include "ynet/hashing.hpp"
#include "ynet/image_io.hpp"
#include "ynet/ops.hpp"

namespace ynet {
namespace {

using nlohmann::json;

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

std::string content_id(const std::vector<uint8_t>& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "q-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<uint8_t> heatmap_png(const Tensor& heat) {
  Image8 img;
  img.width = static_cast<int>(heat.dim(1));
  img.height = static_cast<int>(heat.dim(0));
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(heat.numel()));
  for (int64_t i = 0; i < heat.numel(); ++i) {
    img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(std::clamp(heat[i], 0.0, 1.0) * 255.0));
  }
  return encode_png(img);
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(path.string(), "cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

HashConfig plan_for(const YNetParams& params, const Tensor& core) {
  return plan_aggregation(params.config.code_length, core.dim(1), core.dim(2), core.dim(3));
}

}  // namespace

Tensor image_from_png(const std::vector<uint8_t>& png, int input_size) {
  const Image8 img = decode_png(png);
  if (img.width != img.height) throw FormatError("query image must be square");
  const int64_t n = img.width;
  Tensor t({1, 3, n, n});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < n * n; ++i) {
      const int64_t src_c = img.channels == 1 ? 0 : c;
      t[c * n * n + i] = img.pixels[static_cast<size_t>(i * img.channels + src_c)] / 255.0;
    }
  if (n == input_size) return t;
  Tape tape;
  return nn::bilinear_resize(tape.constant(t), input_size, input_size).value();
}

std::vector<HashCode> encode_images(const YNetParams& params, const Tensor& images) {
  const BackboneOutput bb = forward_backbone(params, images);
  return encode_batch(bb.core, plan_for(params, bb.core));
}

Service::Service(YNetParams params) : params_(std::move(params)) { params_.config.validate(); }

std::shared_ptr<const GallerySnapshot> Service::attach_snapshot(HashIndex index,
                                                                const std::filesystem::path& gallery_dir) const {
  if (index.k() != params_.config.code_length) {
    throw ConfigError("index holds " + std::to_string(index.k()) + "-bit codes but the model is configured for " +
                      std::to_string(params_.config.code_length));
  }
  auto snap = std::make_shared<GallerySnapshot>(GallerySnapshot{std::move(index), {}, gallery_dir});
  // Metadata only; images are read lazily for heatmaps.
  for (const Sample& s : load_dataset(gallery_dir)) {
    snap->items[s.id] = {s.label, s.stage, gallery_dir / "images" / (s.id + ".png")};
  }
  for (const std::string& id : snap->index.ids()) {
    if (!snap->items.count(id)) throw ConfigError("index entry " + id + " is not in gallery " + gallery_dir.string());
  }
  return snap;
}

std::shared_ptr<const GallerySnapshot> Service::build_snapshot(const std::filesystem::path& gallery_dir) const {
  const std::vector<Sample> samples = load_dataset(gallery_dir);
  if (samples.empty()) throw DatasetError(gallery_dir.string(), "gallery has no images");
  const Tensor cores = compute_cores(params_, samples);
  std::vector<std::string> ids;
  auto snap = std::make_shared<GallerySnapshot>();
  for (const Sample& s : samples) {
    ids.push_back(s.id);
    snap->items[s.id] = {s.label, s.stage, gallery_dir / "images" / (s.id + ".png")};
  }
  snap->index = HashIndex::build(encode_batch(cores, plan_for(params_, cores)), ids);
  snap->source = gallery_dir;
  return snap;
}

void Service::install(std::shared_ptr<const GallerySnapshot> snapshot) {
  if (snapshot && snapshot->index.k() != params_.config.code_length) {
    throw ConfigError("index code length does not match the model");
  }
  std::atomic_store(&snapshot_, std::move(snapshot));
}

std::shared_ptr<const GallerySnapshot> Service::snapshot() const { return std::atomic_load(&snapshot_); }

HttpResponse Service::internal_error(const std::exception& e) const {
  char id[32];
  std::snprintf(id, sizeof(id), "err-%06llu", static_cast<unsigned long long>(++error_counter_));
  std::cerr << "[" << id << "] " << e.what() << "\n";
  return json_response(500, {{"error", "internal error"}, {"error_id", id}});
}

HttpResponse Service::handle_health() const {
  const auto snap = snapshot();
  return json_response(200, {{"status", "ok"},
                             {"index_loaded", snap != nullptr},
                             {"entries", snap ? snap->index.size() : 0},
                             {"code_length", params_.config.code_length}});
}

Tensor Service::prepare_image(const std::vector<uint8_t>& png) const {
  return image_from_png(png, params_.config.input_size);
}

HttpResponse Service::handle_query(const QueryRequest& request) const {
  int topk = 0;
  try {
    size_t used = 0;
    topk = std::stoi(request.topk, &used);
    if (used != request.topk.size()) topk = 0;
  } catch (const std::exception&) {
    topk = 0;
  }
  if (topk < 1 || topk > 100) return error_response(400, "topk must be an integer in [1, 100]");
  const auto snap = snapshot();
  if (!snap) return error_response(409, "no index loaded");
  Tensor image;
  try {
    image = prepare_image(request.image);
  } catch (const FormatError& e) {
    return error_response(400, std::string("undecodable image: ") + e.what());
  }
  try {
    const BackboneOutput bb = forward_backbone(params_, image);
    const HashCode code = encode_batch(bb.core, plan_for(params_, bb.core)).front();
    json hits = json::array();
    for (const Hit& h : snap->index.query_topk(code, topk)) {
      const GalleryItem& item = snap->items.at(h.id);
      hits.push_back({{"id", h.id},
                      {"hamming_distance", h.distance},
                      {"label", item.label},
                      {"stage", item.stage ? json(*item.stage) : json(nullptr)}});
    }
    json body = {{"query_id", content_id(request.image)}, {"code_length", code.k}, {"hits", hits}};
    if (request.include_heatmap) {
      const Tensor heat = feature_heatmap(bb.core, params_.config.input_size);
      const auto png = heatmap_png(heat);
      body["heatmap_png_base64"] = httplib::detail::base64_encode(std::string(png.begin(), png.end()));
    }
    return json_response(200, body);
  } catch (const std::exception& e) {
    return internal_error(e);
  }
}

HttpResponse Service::handle_reindex(const std::string& gallery_dir) {
  bool expected = false;
  if (!reindexing_.compare_exchange_strong(expected, true)) return error_response(423, "a reindex is already running");
  struct Release {
    std::atomic<bool>& flag;
    ~Release() { flag = false; }
  } release{reindexing_};
  if (gallery_dir.empty()) return error_response(400, "missing gallery path");
  std::shared_ptr<const GallerySnapshot> snap;
  try {
    snap = build_snapshot(gallery_dir);
  } catch (const DatasetError& e) {
    return error_response(400, e.what());
  } catch (const FormatError& e) {
    return error_response(400, e.what());
  } catch (const ShapeError& e) {
    return error_response(400, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return internal_error(e);
  }
  if (reindex_hook_) reindex_hook_();
  install(snap);
  return json_response(200, {{"status", "ok"}, {"count", snap->index.size()}, {"code_length", snap->index.k()}});
}

HttpResponse Service::handle_heatmap(const std::string& id) const {
  const auto snap = snapshot();
  if (!snap) return error_response(409, "no index loaded");
  const auto it = snap->items.find(id);
  if (it == snap->items.end()) return error_response(404, "unknown id " + id);
  try {
    const Tensor image = prepare_image(read_file(it->second.image_path));
    const BackboneOutput bb = forward_backbone(params_, image);
    const auto png = heatmap_png(feature_heatmap(bb.core, params_.config.input_size));
    return {200, "image/png", std::string(png.begin(), png.end())};
  } catch (const std::exception& e) {
    return internal_error(e);
  }
}

void Service::serve(const std::string& host, int port, const std::optional<std::filesystem::path>& static_dir,
                    const std::function<void(int)>& on_listening) {
  httplib::Server server;
  auto reply = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get("/health", [&](const httplib::Request&, httplib::Response& res) { reply(res, handle_health()); });
  server.Post("/query", [&](const httplib::Request& req, httplib::Response& res) {
    QueryRequest q;
    if (req.has_file("image")) {
      const std::string& content = req.get_file_value("image").content;
      q.image.assign(content.begin(), content.end());
    }
    if (req.has_file("topk")) q.topk = req.get_file_value("topk").content;
    else if (req.has_param("topk")) q.topk = req.get_param_value("topk");
    std::string flag;
    if (req.has_file("include_heatmap")) flag = req.get_file_value("include_heatmap").content;
    else if (req.has_param("include_heatmap")) flag = req.get_param_value("include_heatmap");
    q.include_heatmap = flag == "1" || flag == "true";
    reply(res, handle_query(q));
  });
  server.Post("/admin/reindex", [&](const httplib::Request& req, httplib::Response& res) {
    std::string gallery;
    if (req.has_param("gallery")) {
      gallery = req.get_param_value("gallery");
    } else if (req.has_file("gallery")) {
      gallery = req.get_file_value("gallery").content;
    } else if (!req.body.empty()) {
      try {
        gallery = json::parse(req.body).value("gallery", "");
      } catch (const json::exception&) {
        reply(res, error_response(400, "body must be JSON {\"gallery\": \"<dir>\"}"));
        return;
      }
    }
    reply(res, handle_reindex(gallery));
  });
  server.Get(R"(/heatmap/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_heatmap(req.matches[1]));
  });
  if (static_dir && !server.set_mount_point("/", static_dir->string())) {
    throw ConfigError("static directory " + static_dir->string() + " does not exist");
  }
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  {
    std::lock_guard lock(stop_mutex_);
    stop_ = [&server] { server.stop(); };
  }
  if (on_listening) on_listening(bound);
  else std::cerr << "listening on " << host << ":" << bound << "\n";
  const bool ok = server.listen_after_bind();
  {
    std::lock_guard lock(stop_mutex_);
    stop_ = nullptr;
  }
  if (!ok) throw Error("server on " + host + ":" + std::to_string(bound) + " stopped with an error");
}

void Service::stop() {
  std::lock_guard lock(stop_mutex_);
  if (stop_) stop_();
}

}  // namespace ynet
