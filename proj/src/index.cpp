#include "ynet/index.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <unordered_set>

#include "ynet/errors.hpp"

namespace ynet {
namespace {

static_assert(std::endian::native == std::endian::little, "index I/O assumes a little-endian host");

constexpr char kMagic[4] = {'Y', 'N', 'I', 'X'};

template <class T>
void put(std::vector<uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    if (bytes.size() - pos < n) throw FormatError("index file is truncated");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
};

}  // namespace

int hamming(const uint64_t* a, const uint64_t* b, int words) {
  int d = 0;
  for (int i = 0; i < words; ++i) d += std::popcount(a[i] ^ b[i]);
  return d;
}

int hamming(const HashCode& a, const HashCode& b) {
  if (a.k != b.k) throw ShapeError("hamming: code lengths differ");
  return hamming(a.bits.data(), b.bits.data(), code_words(a.k));
}

HashIndex HashIndex::build(const std::vector<HashCode>& codes, const std::vector<std::string>& ids) {
  if (codes.empty()) throw ConfigError("cannot build an index from zero codes");
  if (codes.size() != ids.size()) throw ConfigError("index build needs one id per code");
  HashIndex idx;
  idx.k_ = codes.front().k;
  if (idx.k_ < 1) throw ConfigError("code length must be >= 1");
  const int w = idx.words();
  std::unordered_set<std::string> seen;
  idx.codes_.reserve(codes.size() * static_cast<size_t>(w));
  for (size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].k != idx.k_) {
      throw ConfigError("mixed code lengths: " + std::to_string(codes[i].k) + " vs " + std::to_string(idx.k_));
    }
    if (!seen.insert(ids[i]).second) throw ConfigError("duplicate id in index: " + ids[i]);
    idx.codes_.insert(idx.codes_.end(), codes[i].bits.begin(), codes[i].bits.end());
  }
  idx.ids_ = ids;
  idx.built_at_ = std::chrono::system_clock::now();
  return idx;
}

std::vector<Hit> HashIndex::query_topk(const uint64_t* bits, int topk) const {
  if (topk < 1) throw ConfigError("topk must be >= 1");
  const int w = words();
  const size_t n = size();
  std::vector<int> dist(n);
  for (size_t i = 0; i < n; ++i) dist[i] = hamming(bits, code(i), w);
  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  const size_t m = std::min(n, static_cast<size_t>(topk));
  auto less = [&](uint32_t a, uint32_t b) { return dist[a] != dist[b] ? dist[a] < dist[b] : a < b; };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(), less);
  std::vector<Hit> out;
  out.reserve(m);
  for (size_t i = 0; i < m; ++i) out.push_back({ids_[order[i]], dist[order[i]]});
  return out;
}

std::vector<Hit> HashIndex::query_topk(const HashCode& code, int topk) const {
  if (code.k != k_) {
    throw ShapeError("query code has " + std::to_string(code.k) + " bits, index has " + std::to_string(k_));
  }
  return query_topk(code.bits.data(), topk);
}

std::vector<uint8_t> HashIndex::serialize() const {
  std::vector<uint8_t> out(kMagic, kMagic + 4);
  put<uint32_t>(out, kIndexVersion);
  put<uint32_t>(out, static_cast<uint32_t>(k_));
  put<uint64_t>(out, static_cast<uint64_t>(ids_.size()));
  for (const std::string& id : ids_) {
    put<uint32_t>(out, static_cast<uint32_t>(id.size()));
    out.insert(out.end(), id.begin(), id.end());
  }
  for (uint64_t word : codes_) put<uint64_t>(out, word);
  return out;
}

HashIndex HashIndex::deserialize(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a YNIX index (bad magic)");
  r.pos = 4;
  const auto version = r.get<uint32_t>();
  if (version != kIndexVersion) throw FormatError("unsupported index version " + std::to_string(version));
  HashIndex idx;
  idx.k_ = static_cast<int>(r.get<uint32_t>());
  const auto count = r.get<uint64_t>();
  if (idx.k_ < 1 || count == 0) throw FormatError("index header is invalid");
  // Each entry needs at least a length prefix and its code words.
  const uint64_t min_entry = 4 + 8 * static_cast<uint64_t>(idx.words());
  if (count > (bytes.size() - r.pos) / min_entry) throw FormatError("index file is truncated");
  idx.ids_.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    const auto len = r.get<uint32_t>();
    r.need(len);
    idx.ids_.emplace_back(reinterpret_cast<const char*>(bytes.data() + r.pos), len);
    r.pos += len;
  }
  const size_t words = count * static_cast<size_t>(idx.words());
  r.need(words * 8);
  idx.codes_.resize(words);
  std::memcpy(idx.codes_.data(), bytes.data() + r.pos, words * 8);
  r.pos += words * 8;
  if (r.pos != bytes.size()) throw FormatError("trailing bytes after index data");
  idx.built_at_ = std::chrono::system_clock::now();
  return idx;
}

void HashIndex::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

HashIndex HashIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open index " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace ynet
