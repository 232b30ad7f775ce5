#include "ynet/hashing.hpp"

#include <cmath>

#include "ynet/autograd.hpp"
#include "ynet/errors.hpp"
#include "ynet/model.hpp"
#include "ynet/ops.hpp"

namespace ynet {

HashConfig plan_aggregation(int k, int64_t channels, int64_t height, int64_t width) {
  if (k < 1) throw ConfigError("code length must be >= 1");
  if (height != width || height < 1) throw ConfigError("hash aggregation needs a square feature map");
  (void)channels;
  const int64_t area = height * width;
  const int64_t c = (k + area - 1) / area;
  if (k % c == 0) {
    const int64_t q = k / c;
    const auto s = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(q))));
    if (s * s == q) return {k, static_cast<int>(c), static_cast<int>(s), static_cast<int>(s)};
  }
  return {k, k, 1, 1};
}

HashCode pack_code(const std::vector<double>& real) {
  HashCode code;
  code.k = static_cast<int>(real.size());
  code.real = real;
  code.bits.assign(static_cast<size_t>(code_words(code.k)), 0);
  for (int j = 0; j < code.k; ++j) {
    if (binarize(real[static_cast<size_t>(j)])) code.bits[static_cast<size_t>(j / 64)] |= uint64_t{1} << (j % 64);
  }
  return code;
}

std::vector<HashCode> encode_batch(const Tensor& core, const HashConfig& cfg) {
  const Tensor batch = as_batch(core);
  const int64_t n = batch.dim(0), channels = batch.dim(1);
  if (static_cast<int64_t>(cfg.c) * cfg.h * cfg.w != cfg.k) {
    throw ConfigError("hash plan " + std::to_string(cfg.c) + "x" + std::to_string(cfg.h) + "x" +
                      std::to_string(cfg.w) + " does not hold k=" + std::to_string(cfg.k) + " values");
  }
  if (cfg.c > channels) {
    throw ShapeError("hash plan needs " + std::to_string(cfg.c) + " channel groups but the core has " +
                     std::to_string(channels) + " channels");
  }
  if (cfg.h > batch.dim(2) || cfg.w > batch.dim(3)) throw ShapeError("hash plan is larger than the core map");
  Tape tape;
  Var x = tape.constant(batch);
  x = nn::channel_group_mean(x, cfg.c);
  x = nn::adaptive_avg_pool2d(x, cfg.h, cfg.w);
  x = nn::tanh(x);
  const Tensor& v = x.value();
  std::vector<HashCode> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    out.push_back(pack_code(std::vector<double>(v.ptr() + i * cfg.k, v.ptr() + (i + 1) * cfg.k)));
  }
  return out;
}

HashCode encode(const Tensor& core, const HashConfig& cfg) {
  if (core.rank() == 4 && core.dim(0) != 1) throw ShapeError("encode: expected a single core map");
  return encode_batch(core, cfg).front();
}

}  // namespace ynet
