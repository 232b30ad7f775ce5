#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ynet/hashing.hpp"

namespace ynet {

inline constexpr uint32_t kIndexVersion = 1;

struct Hit {
  std::string id;
  int distance = 0;
  bool operator==(const Hit&) const = default;
};

int hamming(const uint64_t* a, const uint64_t* b, int words);
int hamming(const HashCode& a, const HashCode& b);

/// Immutable Hamming index. Codes are stored back to back, `words()` u64
/// per entry, in insertion order.
class HashIndex {
 public:
  // Throws on empty input, mixed k, or a duplicate id.
  static HashIndex build(const std::vector<HashCode>& codes, const std::vector<std::string>& ids);

  /// Exact scan; ascending distance, ties in insertion order.
  std::vector<Hit> query_topk(const HashCode& code, int topk) const;
  std::vector<Hit> query_topk(const uint64_t* bits, int topk) const;

  // "YNIX" | u32 version | u32 k | u64 count | count x (u32 len, UTF-8 id) |
  // count x words() x u64, all little-endian. The build time is not stored.
  void save(const std::filesystem::path& path) const;
  std::vector<uint8_t> serialize() const;
  static HashIndex load(const std::filesystem::path& path);
  static HashIndex deserialize(const std::vector<uint8_t>& bytes);

  int k() const { return k_; }
  int words() const { return code_words(k_); }
  size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const uint64_t* code(size_t i) const { return codes_.data() + i * static_cast<size_t>(words()); }
  std::chrono::system_clock::time_point built_at() const { return built_at_; }

 private:
  int k_ = 0;
  std::vector<std::string> ids_;
  std::vector<uint64_t> codes_;
  std::chrono::system_clock::time_point built_at_{};
};

}  // namespace ynet
