#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ynet/autograd.hpp"
#include "ynet/grad_check.hpp"

namespace ynet::testing {

inline Tensor random_tensor(const Shape& shape, uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, stddev);
  Tensor t(shape);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Values at least `gap` apart, shuffled, centred on zero. Keeps max/relu
// kinks away from finite-difference probes.
inline Tensor distinct_tensor(const Shape& shape, uint64_t seed, double gap = 0.02) {
  Tensor t(shape);
  std::vector<int64_t> order(static_cast<size_t>(t.numel()));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const double mid = 0.5 * static_cast<double>(t.numel());
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = (static_cast<double>(order[static_cast<size_t>(i)]) - mid + 0.5) * gap;
  return t;
}

// sum(x * w) for a constant w; a scalar probe that weights every output differently.
inline Var probe(Tape& tape, Var x, const Tensor& w) {
  const Tensor& v = x.value();
  double s = 0.0;
  for (int64_t i = 0; i < v.numel(); ++i) s += v[i] * w[i];
  return tape.record(Tensor::scalar(s), {x}, [&tape, x, w](const Tensor& g) {
    Tensor& d = tape.grad_buffer(x);
    for (int64_t i = 0; i < d.numel(); ++i) d[i] += g[0] * w[i];
  });
}

inline Var probe(Tape& tape, Var x, uint64_t seed) { return probe(tape, x, random_tensor(x.shape(), seed)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ynet::testing
