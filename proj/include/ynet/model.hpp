#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ynet/autograd.hpp"
#include "ynet/ops.hpp"

namespace ynet {

enum class Mode { train, eval };

struct YNetConfig {
  int input_size = 256;
  int in_channels = 3;
  std::vector<int> tap_channels = {32, 64, 128};  // b1, b2, b3
  int core_channels = 256;
  int rmac_channels = 512;
  int fpn_channels = 32;
  int num_classes = 2;
  int mask_classes = 2;
  int rmac_scales = 3;
  double overlap_min = 0.4;
  int code_length = 64;

  static YNetConfig standard(int num_classes = 2);
  // 64 x 64 inputs, same channel widths.
  static YNetConfig tiny(int num_classes = 2);

  // Throws ConfigError.
  void validate() const;

  bool operator==(const YNetConfig&) const = default;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  enum class Kind { conv, linear, bias, bn_scale, bn_shift } kind;
};

// Every learnable tensor in declaration order.
std::vector<ParamSpec> param_layout(const YNetConfig& config);
// Names of the batch-norm layers, each with `<name>.weight` / `<name>.bias`.
std::vector<std::string> batch_norm_layers(const YNetConfig& config);

struct YNetParams {
  YNetConfig config;
  std::map<std::string, Tensor> weights;
  std::map<std::string, nn::BatchNormStats> bn_stats;

  const Tensor& weight(const std::string& name) const;
  bool identical(const YNetParams& other) const;
  bool all_finite() const;
};

/// Kaiming fan-in normal convs and linear rows, zero biases, unit BN scales.
YNetParams build_model(const YNetConfig& config, uint64_t seed);

/// Tap activations and the core node, each N x C x H x W.
struct BackboneOutput {
  Tensor b1, b2, b3, core;
};

struct FpnOutput {
  Tensor t3, t2, t1, mask_logits;
};

/// Wires the Y-Net graph onto a tape.
///
/// With mutable params and Mode::train, weights are trainable leaves and
/// batch-norm running statistics are updated in place. The const overload
/// is read-only inference and may be used concurrently on shared params.
class YNetGraph {
 public:
  struct Backbone {
    Var b1, b2, b3, core;
  };
  struct Fpn {
    Var t3, t2, t1, mask_logits;
  };

  YNetGraph(Tape& tape, YNetParams& params, Mode mode);
  YNetGraph(Tape& tape, const YNetParams& params);

  Backbone backbone(Var image);
  // 3x3 conv + BN + ReLU on the core node.
  Var rmac_features(Var core);
  // Region max-pool, normalise, sum, normalise.
  Var rmac_pool(Var features);
  Var rmac_descriptor(Var core) { return rmac_pool(rmac_features(core)); }
  // Cosine similarity between descriptors and L2-normalised class rows.
  Var classify(Var descriptor);
  Fpn fpn(const Backbone& bb);

  Var weight(const std::string& name);
  // Uses `v` in place of the stored tensor `name` (e.g. for gradient checks).
  void bind(const std::string& name, Var v);
  // Weights bound so far, by name.
  const std::map<std::string, Var>& bound() const { return bound_; }

 private:
  Var conv(Var x, const std::string& name, int stride, int padding);
  Var bn(Var x, const std::string& name);
  Var residual_block(Var x, const std::string& name, int stride);

  Tape& tape_;
  const YNetParams* params_;
  YNetParams* mutable_params_;
  bool training_;
  std::map<std::string, Var> bound_;
};

// Accepts C x H x W or N x C x H x W images.
Tensor as_batch(const Tensor& image);

BackboneOutput forward_backbone(const YNetParams& params, const Tensor& image);
BackboneOutput forward_backbone(YNetParams& params, const Tensor& image, Mode mode);

/// Multi-scale rigid grid: scale s has side 2*min(W,H)/(s+2) and
/// (s+1) x (s+1) evenly spaced windows. Throws ConfigError when
/// neighbouring windows overlap less than `overlap_min`.
std::vector<nn::Rect> rmac_grid(int64_t width, int64_t height, int scales, double overlap_min);

// Fraction of a window shared with its neighbour along each axis at scale s
// (1.0 for the single window at s = 0); {x, y}.
std::pair<double, double> rmac_scale_overlap(int64_t width, int64_t height, int s);

Tensor rmac_descriptor(const YNetParams& params, const Tensor& core);
// Grid pooling applied directly to post-conv features.
Tensor rmac_pool(const Tensor& features, int scales, double overlap_min);
Tensor classify_logits(const YNetParams& params, const Tensor& descriptor);
FpnOutput fpn_forward(const YNetParams& params, const BackboneOutput& backbone);

/// Channel-mean map resized to target x target and min-max scaled to [0, 1].
/// Constant maps come out as all 0.5.
Tensor feature_heatmap(const Tensor& features, int64_t target);

}  // namespace ynet
