#include "ynet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ynet/errors.hpp"

namespace ynet {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'Y', 'N', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void str(const std::string& s) {
    put<uint32_t>(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}
  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = get<uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void read(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("checkpoint is truncated");
  }
  std::vector<char> buf_;
  size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.put<uint32_t>(static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) w.put<uint64_t>(static_cast<uint64_t>(d));
  w.bytes(t.ptr(), static_cast<size_t>(t.numel()) * sizeof(double));
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::string config_to_text(const YNetConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "input_size=" << c.input_size << "\n"
    << "in_channels=" << c.in_channels << "\n"
    << "tap_channels=" << join_ints(c.tap_channels) << "\n"
    << "core_channels=" << c.core_channels << "\n"
    << "rmac_channels=" << c.rmac_channels << "\n"
    << "fpn_channels=" << c.fpn_channels << "\n"
    << "num_classes=" << c.num_classes << "\n"
    << "mask_classes=" << c.mask_classes << "\n"
    << "rmac_scales=" << c.rmac_scales << "\n"
    << "overlap_min=" << c.overlap_min << "\n"
    << "code_length=" << c.code_length << "\n";
  return o.str();
}

YNetConfig config_from_text(const std::string& text) {
  YNetConfig c;
  std::istringstream in(text);
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("bad config line: " + line);
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "input_size") c.input_size = std::stoi(val);
      else if (key == "in_channels") c.in_channels = std::stoi(val);
      else if (key == "tap_channels") {
        c.tap_channels.clear();
        std::istringstream parts(val);
        std::string p;
        while (std::getline(parts, p, ',')) c.tap_channels.push_back(std::stoi(p));
      } else if (key == "core_channels") c.core_channels = std::stoi(val);
      else if (key == "rmac_channels") c.rmac_channels = std::stoi(val);
      else if (key == "fpn_channels") c.fpn_channels = std::stoi(val);
      else if (key == "num_classes") c.num_classes = std::stoi(val);
      else if (key == "mask_classes") c.mask_classes = std::stoi(val);
      else if (key == "rmac_scales") c.rmac_scales = std::stoi(val);
      else if (key == "overlap_min") c.overlap_min = std::stod(val);
      else if (key == "code_length") c.code_length = std::stoi(val);
      else throw FormatError("unknown config key: " + key);
    }
  } catch (const std::logic_error&) {
    throw FormatError("unparseable config value in line: " + line);
  }
  return c;
}

void save_checkpoint(const YNetParams& params, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put<uint32_t>(kCheckpointVersion);
  w.str(config_to_text(params.config));
  w.put<uint32_t>(static_cast<uint32_t>(params.weights.size() + 2 * params.bn_stats.size()));
  for (const auto& [name, t] : params.weights) write_tensor(w, name, t);
  for (const auto& [name, s] : params.bn_stats) {
    write_tensor(w, name + ".running_mean", s.mean);
    write_tensor(w, name + ".running_var", s.var);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw Error("failed writing " + path.string());
}

YNetParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(buf));

  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + " is not a Y-Net checkpoint");
  const auto version = r.get<uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  YNetParams p;
  p.config = config_from_text(r.str());
  p.config.validate();

  std::map<std::string, Tensor> stored;
  const auto count = r.get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.get<uint32_t>();
    if (rank == 0 || rank > 8) throw FormatError("tensor " + name + " has invalid rank");
    Shape shape;
    for (uint32_t d = 0; d < rank; ++d) {
      const auto v = r.get<uint64_t>();
      if (v == 0 || v > (1ull << 32)) throw FormatError("tensor " + name + " has invalid dimension");
      shape.push_back(static_cast<int64_t>(v));
    }
    Tensor t(shape);
    r.read(t.ptr(), static_cast<size_t>(t.numel()) * sizeof(double));
    stored.emplace(std::move(name), std::move(t));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint tensors");

  auto take = [&](const std::string& name, const Shape& expected) {
    auto it = stored.find(name);
    if (it == stored.end()) throw FormatError("checkpoint is missing tensor " + name);
    if (it->second.shape() != expected) {
      throw ShapeError(name + ": stored shape " + to_string(it->second.shape()) + ", expected " +
                       to_string(expected));
    }
    Tensor t = std::move(it->second);
    stored.erase(it);
    return t;
  };
  for (const ParamSpec& spec : param_layout(p.config)) p.weights.emplace(spec.name, take(spec.name, spec.shape));
  for (const std::string& layer : batch_norm_layers(p.config)) {
    const Shape s{p.weights.at(layer + ".weight").numel()};
    nn::BatchNormStats st{take(layer + ".running_mean", s), take(layer + ".running_var", s)};
    p.bn_stats.emplace(layer, std::move(st));
  }
  if (!stored.empty()) throw FormatError("checkpoint has unexpected tensor " + stored.begin()->first);
  return p;
}

YNetParams load_checkpoint(const std::filesystem::path& path, const YNetConfig& expected) {
  YNetParams p = load_checkpoint(path);
  if (p.config == expected) return p;
  const auto want = param_layout(expected);
  for (const ParamSpec& spec : want) {
    auto it = p.weights.find(spec.name);
    if (it == p.weights.end()) throw ShapeError(spec.name + ": not present in checkpoint");
    if (it->second.shape() != spec.shape) {
      throw ShapeError(spec.name + ": checkpoint shape " + to_string(it->second.shape()) +
                       " does not match configured " + to_string(spec.shape));
    }
  }
  throw ConfigError("checkpoint config differs from the expected config");
}

}  // namespace ynet
