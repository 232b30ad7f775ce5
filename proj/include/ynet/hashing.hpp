#pragma once

#include <cstdint>
#include <vector>

#include "ynet/tensor.hpp"

namespace ynet {

/// Aggregation target c x h x w for a k-bit code.
struct HashConfig {
  int k = 64;
  int c = 1, h = 8, w = 8;
};

// c = ceil(k / (H*W)); (c, s, s) when k / c is a whole square s^2, else (k, 1, 1).
HashConfig plan_aggregation(int k, int64_t channels, int64_t height, int64_t width);

inline int code_words(int k) { return (k + 63) / 64; }

/// Packed code: bit j lives in word j / 64 at position j % 64; pad bits are zero.
struct HashCode {
  int k = 0;
  std::vector<uint64_t> bits;
  std::vector<double> real;  // tanh outputs, one per bit

  bool bit(int j) const { return (bits[static_cast<size_t>(j / 64)] >> (j % 64)) & 1u; }
  bool operator==(const HashCode&) const = default;
};

// sign(0) = +1.
inline bool binarize(double v) { return v >= 0.0; }

HashCode pack_code(const std::vector<double>& real);

/// Channel-group mean, adaptive average pool to h x w, flatten, tanh, sign.
/// core is C x H x W or N x C x H x W (one code per item).
HashCode encode(const Tensor& core, const HashConfig& cfg);
std::vector<HashCode> encode_batch(const Tensor& core, const HashConfig& cfg);

}  // namespace ynet
