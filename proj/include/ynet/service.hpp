#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ynet/index.hpp"
#include "ynet/model.hpp"

namespace ynet {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct QueryRequest {
  std::vector<uint8_t> image;  // PNG bytes
  std::string topk = "10";     // raw form value
  bool include_heatmap = false;
};

struct GalleryItem {
  int label = 0;
  std::optional<double> stage;
  std::filesystem::path image_path;
};

// Index plus per-id metadata; replaced as a whole on reindex.
struct GallerySnapshot {
  HashIndex index;
  std::map<std::string, GalleryItem> items;
  std::filesystem::path source;
};

/// Query service over read-only params and an atomically swappable index.
///
/// Response bodies are JSON. Handlers are independent of the HTTP layer and
/// safe to call concurrently.
class Service {
 public:
  explicit Service(YNetParams params);

  // Encodes every image of a load_dataset-layout directory. Throws.
  std::shared_ptr<const GallerySnapshot> build_snapshot(const std::filesystem::path& gallery_dir) const;
  // Pairs a saved index with gallery metadata from `gallery_dir`.
  std::shared_ptr<const GallerySnapshot> attach_snapshot(HashIndex index,
                                                         const std::filesystem::path& gallery_dir) const;
  void install(std::shared_ptr<const GallerySnapshot> snapshot);
  std::shared_ptr<const GallerySnapshot> snapshot() const;

  HttpResponse handle_health() const;
  // 400 bad image or topk outside [1, 100]; 409 without an index.
  HttpResponse handle_query(const QueryRequest& request) const;
  // 400 bad gallery; 423 while another reindex is running.
  HttpResponse handle_reindex(const std::string& gallery_dir);
  // PNG heatmap of a gallery item's core features; 404 for unknown ids.
  HttpResponse handle_heatmap(const std::string& id) const;

  // Test hook: runs inside handle_reindex after the gallery is encoded.
  void set_reindex_hook(std::function<void()> hook) { reindex_hook_ = std::move(hook); }

  const YNetParams& params() const { return params_; }

  /// Blocking HTTP/1.1 server. Port 0 picks a free port; `on_listening`
  /// receives the bound port once connections are accepted.
  void serve(const std::string& host, int port, const std::optional<std::filesystem::path>& static_dir = {},
             const std::function<void(int)>& on_listening = {});
  // Makes a running serve() return. Safe from any thread.
  void stop();

 private:
  Tensor prepare_image(const std::vector<uint8_t>& png) const;
  HttpResponse internal_error(const std::exception& e) const;

  YNetParams params_;
  std::shared_ptr<const GallerySnapshot> snapshot_;
  std::atomic<bool> reindexing_{false};
  mutable std::atomic<uint64_t> error_counter_{0};
  std::function<void()> reindex_hook_;
  std::mutex stop_mutex_;
  std::function<void()> stop_;
};

// Decodes a PNG into a 3 x S x S tensor at the model's input size
// (bilinear resize for other square sizes). Throws FormatError.
Tensor image_from_png(const std::vector<uint8_t>& png, int input_size);

// Codes for a batch of images, using the plan for config.code_length.
std::vector<HashCode> encode_images(const YNetParams& params, const Tensor& images);

}  // namespace ynet
