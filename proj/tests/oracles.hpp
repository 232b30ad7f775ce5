#pragma once

// Straight-line reference implementations used to cross-check the library.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ynet/tensor.hpp"

namespace ynet::oracle {

inline Tensor conv_oracle(const Tensor& x, const Tensor& k, int stride, int pad) {
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int64_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out({n, co, oh, ow});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          double s = 0.0;
          for (int64_t c = 0; c < ci; ++c)
            for (int64_t i = 0; i < kh; ++i)
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t sy = y * stride - pad + i, sx = xx * stride - pad + j;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                s += x.at(b, c, sy, sx) * k.at(o, c, i, j);
              }
          out.at(b, o, y, xx) = s;
        }
  return out;
}

inline double bilinear_sample(const Tensor& x, int64_t b, int64_t c, double sy, double sx) {
  const int64_t h = x.dim(2), w = x.dim(3);
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<int64_t>(std::floor(sy)), x0 = static_cast<int64_t>(std::floor(sx));
  const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * x.at(b, c, y0, x0) + fx * x.at(b, c, y0, x1)) +
         fy * ((1 - fx) * x.at(b, c, y1, x0) + fx * x.at(b, c, y1, x1));
}

inline Tensor bilinear_oracle(const Tensor& x, int64_t oh, int64_t ow) {
  Tensor out({x.dim(0), x.dim(1), oh, ow});
  const double ry = static_cast<double>(x.dim(2)) / static_cast<double>(oh);
  const double rx = static_cast<double>(x.dim(3)) / static_cast<double>(ow);
  for (int64_t b = 0; b < x.dim(0); ++b)
    for (int64_t c = 0; c < x.dim(1); ++c)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j)
          out.at(b, c, i, j) = bilinear_sample(x, b, c, (i + 0.5) * ry - 0.5, (j + 0.5) * rx - 0.5);
  return out;
}

// AP recomputing each precision from scratch.
inline double ap_oracle(const std::vector<bool>& rel, long long relevant_total) {
  const long long n = static_cast<long long>(rel.size());
  const long long r = relevant_total < n ? relevant_total : n;
  if (r == 0) return 0.0;
  double total = 0.0;
  for (long long k = 1; k <= n; ++k) {
    if (!rel[static_cast<size_t>(k - 1)]) continue;
    long long hits = 0;
    for (long long j = 1; j <= k; ++j) hits += rel[static_cast<size_t>(j - 1)] ? 1 : 0;
    total += static_cast<double>(hits) / static_cast<double>(k);
  }
  return total / static_cast<double>(r);
}

// Ranks +-1 vectors by squared Euclidean distance; ties keep gallery order.
// Returns (index, squared distance) pairs.
inline std::vector<std::pair<size_t, double>> l2_rank_oracle(const std::vector<std::vector<float>>& gallery,
                                                             const std::vector<float>& query) {
  std::vector<std::pair<size_t, double>> out;
  for (size_t i = 0; i < gallery.size(); ++i) {
    double d = 0.0;
    for (size_t j = 0; j < query.size(); ++j) {
      const double diff = static_cast<double>(gallery[i][j]) - static_cast<double>(query[j]);
      d += diff * diff;
    }
    out.emplace_back(i, d);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  return out;
}

// Group mean over contiguous channel blocks (last absorbs the remainder),
// floor/ceil adaptive average pool, tanh. Returns the real code for item 0.
inline std::vector<double> hash_real_oracle(const Tensor& core, int c, int h, int w) {
  const int64_t channels = core.dim(1), height = core.dim(2), width = core.dim(3);
  const int64_t group = channels / c;
  std::vector<double> out;
  for (int g = 0; g < c; ++g) {
    const int64_t c0 = g * group, c1 = g == c - 1 ? channels : c0 + group;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const int64_t y0 = i * height / h, y1 = ((i + 1) * height + h - 1) / h;
        const int64_t x0 = j * width / w, x1 = ((j + 1) * width + w - 1) / w;
        double s = 0.0;
        for (int64_t ch = c0; ch < c1; ++ch)
          for (int64_t y = y0; y < y1; ++y)
            for (int64_t x = x0; x < x1; ++x) s += core.at(0, ch, y, x);
        out.push_back(std::tanh(s / static_cast<double>((c1 - c0) * (y1 - y0) * (x1 - x0))));
      }
  }
  return out;
}

}  // namespace ynet::oracle
