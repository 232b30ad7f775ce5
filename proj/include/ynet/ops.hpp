#pragma once

#include <cstdint>
#include <vector>

#include "ynet/autograd.hpp"

// Differentiable ops for the Y-Net graph. Image-like inputs are N x C x H x W;
// a single C x H x W map is the N = 1 case. All ops are deterministic and
// break max ties on the first element in row-major order.
namespace ynet::nn {

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Rect {
  int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int64_t width() const { return x1 - x0; }
  int64_t height() const { return y1 - y0; }
  bool operator==(const Rect&) const = default;
};

struct BatchNormStats {
  Tensor mean;
  Tensor var;
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

int64_t conv_output_size(int64_t in, int64_t kernel, int64_t stride, int64_t padding);

// Cross-correlation with zero padding. kernel is C_out x C_in x kh x kw, kh/kw odd.
Var conv2d(Var input, Var kernel, int stride, int padding);
// Adds a per-channel bias of shape [C].
Var add_channel_bias(Var input, Var bias);

// Half-pixel-centre bilinear resampling with edge clamping.
Var bilinear_resize(Var input, int64_t out_h, int64_t out_w);
Var bilinear_upsample_2x(Var input);
Var bilinear_upsample(Var input, int factor);

// Per-channel max over `region`; returns N x C.
Var region_max_pool(Var input, const Rect& region);

Var max_pool_2d(Var input, int kernel, int stride, int padding);

// Training mode: normalises with batch statistics and folds them into
// `running` (momentum kBatchNormMomentum, unbiased variance).
Var batch_norm_2d(Var input, Var gamma, Var beta, BatchNormStats& running, bool training);
// Eval mode: an affine map from the fixed running statistics.
Var batch_norm_2d(Var input, Var gamma, Var beta, const BatchNormStats& running);

Var relu(Var x);
Var tanh(Var x);
Var add(Var a, Var b);
Var scale(Var x, double factor);

// x: N x D, weight: O x D -> N x O.
Var linear(Var x, Var weight);
// Row-wise L2 normalisation of a 2-D tensor; zero rows map to zero.
Var l2_normalize(Var x);

// N x C x H x W -> N x C
Var global_avg_pool(Var x);
// Adaptive average pooling with floor/ceil bin edges.
Var adaptive_avg_pool2d(Var x, int64_t out_h, int64_t out_w);
// Averages `groups` contiguous channel blocks; the last block absorbs the remainder.
Var channel_group_mean(Var x, int64_t groups);

Var reshape(Var x, Shape shape);
Var sum(Var x);
Var mean(Var x);
// a * wa + b * wb for scalar a, b; weights are constants.
Var weighted_sum(Var a, double wa, Var b, double wb);

// Mean softmax cross-entropy. logits are N x K (targets size N) or
// N x K x H x W (targets size N*H*W, row-major over n, h, w).
Var softmax_cross_entropy(Var logits, const std::vector<int>& targets);

}  // namespace ynet::nn
