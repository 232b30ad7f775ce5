#include "ynet/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ynet/checkpoint.hpp"
#include "ynet/dataset.hpp"
#include "ynet/errors.hpp"
#include "ynet/eval.hpp"
#include "ynet/hashing.hpp"
#include "ynet/image_io.hpp"
#include "ynet/index.hpp"
#include "ynet/service.hpp"
#include "ynet/trainer.hpp"

namespace fs = std::filesystem;

namespace ynet {
namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

// `<index>.meta` records how an index was built so query/eval need fewer flags.
struct IndexMeta {
  std::string checkpoint;
  std::string gallery;
  int k = 0;
};

fs::path meta_path(const fs::path& index) { return fs::path(index.string() + ".meta"); }

void write_meta(const fs::path& index, const IndexMeta& m) {
  std::ofstream out(meta_path(index), std::ios::trunc);
  if (!out) throw Error("cannot write " + meta_path(index).string());
  out << "checkpoint=" << m.checkpoint << "\ngallery=" << m.gallery << "\nk=" << m.k << "\n";
}

IndexMeta read_meta(const fs::path& index) {
  IndexMeta m;
  std::ifstream in(meta_path(index));
  if (!in) return m;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "checkpoint") m.checkpoint = value;
    else if (key == "gallery") m.gallery = value;
    else if (key == "k") m.k = std::stoi(value);
  }
  return m;
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

std::string hex_code(const HashCode& code) {
  std::string out;
  char buf[20];
  for (uint64_t w : code.bits) {
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(w));
    out += buf;
  }
  return out;
}

std::vector<uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Options {
  // synth
  std::string scenario = "dpsd";
  int n = 200;
  int size = 64;
  std::string out;
  uint64_t seed = 0;
  // train
  std::string data;
  std::string profile = "tiny";
  int num_classes = 0;
  int code_length = 64;
  TrainConfig train;
  std::string coupling = "balanced";
  std::string history;
  bool kfold = false;
  bool no_fpn = false;
  bool no_rmac = false;
  // encode / index / query / eval / serve
  std::string checkpoint;
  std::string gallery;
  std::string index;
  std::string image;
  std::string queries;
  int topk = 10;
  int k = 0;
  std::vector<int> cutoffs;
  std::vector<int> code_lengths;
  std::string host = "0.0.0.0";
  int port = 0;
  std::string static_dir;
};

YNetParams params_with_k(YNetParams params, int k) {
  if (k > 0) params.config.code_length = k;
  return params;
}

int cmd_synth(const Options& o, std::ostream& out) {
  synth_generate(parse_scenario(o.scenario), o.n, o.size, o.seed, o.out);
  out << "wrote " << o.n << " samples to " << o.out << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const std::vector<Sample> data = load_dataset(o.data);
  if (data.empty()) throw DatasetError(o.data, "dataset is empty");
  int classes = o.num_classes;
  if (classes == 0) {
    for (const Sample& s : data) classes = std::max(classes, s.label + 1);
  }
  YNetConfig mc;
  if (o.profile == "tiny") mc = YNetConfig::tiny(classes);
  else if (o.profile == "standard") mc = YNetConfig::standard(classes);
  else throw ConfigError("unknown profile '" + o.profile + "' (expected tiny or standard)");
  mc.code_length = o.code_length;
  if (data.front().image.dim(1) != mc.input_size) {
    throw ConfigError("images are " + std::to_string(data.front().image.dim(1)) + " px but the " + o.profile +
                      " profile expects " + std::to_string(mc.input_size));
  }
  TrainConfig tc = o.train;
  tc.seed = o.seed;
  tc.loss.mode = o.coupling == "fixed" ? CouplingMode::fixed : CouplingMode::balanced;
  if (o.coupling != "fixed" && o.coupling != "balanced") throw ConfigError("coupling must be fixed or balanced");
  tc.use_fpn = !o.no_fpn;
  tc.use_rmac = !o.no_rmac;
  YNetParams params;
  if (o.kfold) {
    KFoldResult r = kfold_select(mc, data, tc);
    for (const auto& w : r.warnings) err << "warning: " << w << "\n";
    for (size_t f = 0; f < r.fold_scores.size(); ++f) {
      out << "fold " << f << " cls_acc " << r.fold_scores[f].classification << " pixel_acc " << r.fold_scores[f].pixel
          << "\n";
    }
    out << "selected fold " << r.best_fold << "\n";
    params = std::move(r.params);
  } else {
    TrainResult r = train(build_model(mc, o.seed), data, tc, [&](const EpochRecord& e, const YNetParams&) {
      out << "epoch " << e.epoch << " loss " << e.mean_loss << "\n";
      return true;
    });
    if (!o.history.empty()) r.history.write_csv(o.history);
    params = std::move(r.params);
  }
  save_checkpoint(params, o.out);
  out << "saved " << o.out << "\n";
  return 0;
}

int cmd_encode(const Options& o, std::ostream& out) {
  const YNetParams params = params_with_k(load_checkpoint(o.checkpoint), o.k);
  const std::vector<Sample> data = load_dataset(o.data);
  const Tensor cores = compute_cores(params, data);
  const auto codes =
      encode_batch(cores, plan_aggregation(params.config.code_length, cores.dim(1), cores.dim(2), cores.dim(3)));
  std::ofstream file;
  if (!o.out.empty()) {
    file.open(o.out, std::ios::trunc);
    if (!file) throw Error("cannot write " + o.out);
  }
  std::ostream& sink = o.out.empty() ? out : file;
  for (size_t i = 0; i < data.size(); ++i) sink << data[i].id << " " << hex_code(codes[i]) << "\n";
  return 0;
}

int cmd_index(const Options& o, std::ostream& out) {
  const YNetParams params = params_with_k(load_checkpoint(o.checkpoint), o.k);
  Service service(params);
  const auto snap = service.build_snapshot(o.gallery);
  snap->index.save(o.out);
  write_meta(o.out, {absolute(o.checkpoint), absolute(o.gallery), snap->index.k()});
  out << "indexed " << snap->index.size() << " codes of " << snap->index.k() << " bits into " << o.out << "\n";
  return 0;
}

// Checkpoint for an index: explicit flag, else the sidecar.
YNetParams params_for_index(const Options& o, const HashIndex& index) {
  const IndexMeta meta = read_meta(o.index);
  const std::string ckpt = o.checkpoint.empty() ? meta.checkpoint : o.checkpoint;
  if (ckpt.empty()) throw ConfigError("no --checkpoint given and " + meta_path(o.index).string() + " is missing");
  return params_with_k(load_checkpoint(ckpt), index.k());
}

int cmd_query(const Options& o, std::ostream& out) {
  const HashIndex index = HashIndex::load(o.index);
  const YNetParams params = params_for_index(o, index);
  const Tensor image = image_from_png(read_bytes(o.image), params.config.input_size);
  for (const Hit& h : index.query_topk(encode_images(params, image).front(), o.topk)) {
    out << h.id << " " << h.distance << "\n";
  }
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const std::vector<int> cutoffs = o.cutoffs.empty() ? std::vector<int>{5, 10, 20, 50} : o.cutoffs;
  const std::vector<Sample> queries = load_dataset(o.queries);
  if (!o.index.empty()) {
    const HashIndex index = HashIndex::load(o.index);
    const YNetParams params = params_for_index(o, index);
    const std::string gallery_dir = o.gallery.empty() ? read_meta(o.index).gallery : o.gallery;
    if (gallery_dir.empty()) throw ConfigError("no --gallery given and the index sidecar is missing");
    std::map<std::string, GalleryEntry> meta;
    for (const Sample& s : load_dataset(gallery_dir)) meta[s.id] = {s.label, s.stage};
    std::vector<GalleryEntry> info;
    for (const Sample& s : queries) info.push_back({s.label, s.stage});
    const Tensor cores = compute_cores(params, queries);
    const auto codes = encode_batch(cores, plan_aggregation(index.k(), cores.dim(1), cores.dim(2), cores.dim(3)));
    out << benchmark_csv({evaluate_index(index, meta, codes, info, cutoffs)});
    return 0;
  }
  if (o.checkpoint.empty() || o.gallery.empty()) {
    throw ConfigError("eval needs --index, or --checkpoint with --gallery");
  }
  const YNetParams params = load_checkpoint(o.checkpoint);
  const std::vector<int> ks = o.code_lengths.empty() ? std::vector<int>{params.config.code_length} : o.code_lengths;
  out << benchmark_csv(run_benchmark(params, load_dataset(o.gallery), queries, ks, cutoffs));
  return 0;
}

int cmd_serve(const Options& o) {
  int port = o.port;
  if (port == 0) {
    const char* env = std::getenv("YNET_PORT");
    port = env ? std::atoi(env) : 8707;
  }
  if (port < 1 || port > 65535) throw ConfigError("port must lie in [1, 65535]");
  std::string ckpt = o.checkpoint, gallery = o.gallery;
  if (!o.index.empty()) {
    const IndexMeta meta = read_meta(o.index);
    if (ckpt.empty()) ckpt = meta.checkpoint;
    if (gallery.empty()) gallery = meta.gallery;
  }
  if (ckpt.empty()) throw ConfigError("serve needs --checkpoint (or an --index with a sidecar)");
  YNetParams params = load_checkpoint(ckpt);
  std::optional<HashIndex> index;
  if (!o.index.empty()) {
    index = HashIndex::load(o.index);
    params.config.code_length = index->k();
  }
  Service service(std::move(params));
  if (index) {
    if (gallery.empty()) throw ConfigError("serving an index needs --gallery for metadata");
    service.install(service.attach_snapshot(std::move(*index), gallery));
  } else if (!gallery.empty()) {
    service.install(service.build_snapshot(gallery));
  }
  std::optional<fs::path> static_dir;
  if (!o.static_dir.empty()) static_dir = o.static_dir;
  service.serve(o.host, port, static_dir);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Y-Net deep hashing: train, index and query medical image retrieval models", "ynet"};
  app.set_config("--config", "", "Read options from a TOML/INI file ([subcommand] sections)");
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--scenario", o.scenario, "dpsd or spdd")->capture_default_str();
  synth->add_option("--n", o.n, "Number of samples (even)")->capture_default_str();
  synth->add_option("--size", o.size, "Image side in pixels")->capture_default_str();
  synth->add_option("--seed", o.seed)->capture_default_str();
  synth->add_option("--out", o.out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--data", o.data, "Dataset directory")->required();
  tr->add_option("--out", o.out, "Checkpoint path")->required();
  tr->add_option("--profile", o.profile, "tiny (64 px) or standard (256 px)")->capture_default_str();
  tr->add_option("--num-classes", o.num_classes, "Defaults to max label + 1");
  tr->add_option("--code-length", o.code_length, "Hash bits k")->capture_default_str();
  tr->add_option("--epochs", o.train.epochs)->capture_default_str();
  tr->add_option("--lr", o.train.lr)->capture_default_str();
  tr->add_option("--momentum", o.train.momentum)->capture_default_str();
  tr->add_option("--weight-decay", o.train.weight_decay)->capture_default_str();
  tr->add_option("--batch-size", o.train.batch_size)->capture_default_str();
  tr->add_option("--max-steps", o.train.max_steps, "0 = no limit")->capture_default_str();
  tr->add_option("--gamma", o.train.circle.gamma, "Circle loss scale")->capture_default_str();
  tr->add_option("--margin", o.train.circle.margin, "Circle loss margin")->capture_default_str();
  tr->add_option("--coupling", o.coupling, "balanced or fixed")->capture_default_str();
  tr->add_option("--omega", o.train.loss.omega, "Initial/fixed segmentation weight")->capture_default_str();
  tr->add_option("--folds", o.train.folds)->capture_default_str();
  tr->add_flag("--kfold", o.kfold, "Select the best of --folds cross-validation models");
  tr->add_flag("--no-fpn", o.no_fpn, "Drop the segmentation branch");
  tr->add_flag("--no-rmac", o.no_rmac, "Drop the classification branch");
  tr->add_option("--history", o.history, "Write per-step losses as CSV");
  tr->add_option("--seed", o.seed)->capture_default_str();

  auto* enc = app.add_subcommand("encode", "Print hash codes for a dataset");
  enc->add_option("--checkpoint", o.checkpoint)->required();
  enc->add_option("--data", o.data)->required();
  enc->add_option("--k", o.k, "Code length (default: checkpoint's)");
  enc->add_option("--out", o.out, "Write to a file instead of stdout");

  auto* idx = app.add_subcommand("index", "Build a Hamming index over a gallery");
  idx->add_option("--checkpoint", o.checkpoint)->required();
  idx->add_option("--gallery", o.gallery)->required();
  idx->add_option("--out", o.out, "Index path")->required();
  idx->add_option("--k", o.k, "Code length (default: checkpoint's)");

  auto* qry = app.add_subcommand("query", "Rank gallery items for one image");
  qry->add_option("--index", o.index)->required();
  qry->add_option("--image", o.image, "PNG query image")->required();
  qry->add_option("--topk", o.topk)->capture_default_str()->check(CLI::Range(1, 100000));
  qry->add_option("--checkpoint", o.checkpoint, "Default: from the index sidecar");

  auto* ev = app.add_subcommand("eval", "mAP and stage gap as CSV");
  ev->add_option("--queries", o.queries, "Query dataset directory")->required();
  ev->add_option("--index", o.index);
  ev->add_option("--checkpoint", o.checkpoint);
  ev->add_option("--gallery", o.gallery);
  ev->add_option("--cutoff", o.cutoffs, "Cutoffs n (default 5 10 20 50)")->delimiter(',');
  ev->add_option("--code-lengths", o.code_lengths, "Benchmark these k (without --index)")->delimiter(',');

  auto* srv = app.add_subcommand("serve", "HTTP query service");
  srv->add_option("--checkpoint", o.checkpoint);
  srv->add_option("--index", o.index);
  srv->add_option("--gallery", o.gallery);
  srv->add_option("--host", o.host)->capture_default_str();
  srv->add_option("--port", o.port, "Default: $YNET_PORT or 8707");
  srv->add_option("--static-dir", o.static_dir, "Serve these files at /");

  for (CLI::App* sub : {synth, tr, enc, idx, qry, ev, srv}) sub->configurable();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (*synth) return cmd_synth(o, out);
    if (*tr) return cmd_train(o, out, err);
    if (*enc) return cmd_encode(o, out);
    if (*idx) return cmd_index(o, out);
    if (*qry) return cmd_query(o, out);
    if (*ev) return cmd_eval(o, out);
    if (*srv) return cmd_serve(o);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace ynet
