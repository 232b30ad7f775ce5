#include "ynet/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ynet/errors.hpp"

namespace ynet {
namespace {

std::vector<std::string> residual_names(int stage) {
  const std::string b = "block" + std::to_string(stage);
  return {b + ".conv1", b + ".bn1", b + ".conv2", b + ".bn2", b + ".proj", b + ".proj_bn"};
}

bool has_projection(int cin, int cout, int stride) { return stride != 1 || cin != cout; }

int block_stride(int stage) { return stage == 1 ? 1 : 2; }

}  // namespace

YNetConfig YNetConfig::standard(int num_classes) {
  YNetConfig c;
  c.num_classes = num_classes;
  return c;
}

YNetConfig YNetConfig::tiny(int num_classes) {
  YNetConfig c = standard(num_classes);
  c.input_size = 64;
  return c;
}

void YNetConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid YNetConfig: " + m); };
  if (input_size < 32 || input_size % 32 != 0) fail("input_size must be a positive multiple of 32");
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (tap_channels.size() != 3) fail("tap_channels needs exactly three entries");
  for (int c : tap_channels)
    if (c < 1) fail("tap channel counts must be >= 1");
  if (core_channels < 1 || rmac_channels < 1 || fpn_channels < 1) fail("channel counts must be >= 1");
  if (fpn_channels != tap_channels[0]) fail("fpn_channels must equal the b1 tap width (b1 merges without a conv)");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (mask_classes < 2) fail("mask_classes must be >= 2");
  if (rmac_scales < 1) fail("rmac_scales must be >= 1");
  if (!(overlap_min >= 0.0 && overlap_min < 1.0)) fail("overlap_min must lie in [0, 1)");
  if (code_length < 1) fail("code_length must be >= 1");
}

std::vector<ParamSpec> param_layout(const YNetConfig& c) {
  using K = ParamSpec::Kind;
  std::vector<ParamSpec> out;
  auto conv = [&](const std::string& name, int cout, int cin, int k) {
    out.push_back({name + ".weight", {cout, cin, k, k}, K::conv});
  };
  auto bias = [&](const std::string& name, int ch) { out.push_back({name + ".bias", {ch}, K::bias}); };
  auto bn = [&](const std::string& name, int ch) {
    out.push_back({name + ".weight", {ch}, K::bn_scale});
    out.push_back({name + ".bias", {ch}, K::bn_shift});
  };
  const int t1 = c.tap_channels[0], t2 = c.tap_channels[1], t3 = c.tap_channels[2];

  conv("stem.conv", t1, c.in_channels, 7);
  bn("stem.bn", t1);
  const int widths[4] = {t1, t1, t2, t3};
  for (int stage = 1; stage <= 3; ++stage) {
    const auto n = residual_names(stage);
    const int cin = widths[stage - 1], cout = widths[stage];
    conv(n[0], cout, cin, 3);
    bn(n[1], cout);
    conv(n[2], cout, cout, 3);
    bn(n[3], cout);
    if (has_projection(cin, cout, block_stride(stage))) {
      conv(n[4], cout, cin, 1);
      bn(n[5], cout);
    }
  }
  conv("core.conv", c.core_channels, t3, 3);
  bn("core.bn", c.core_channels);

  conv("rmac.conv", c.rmac_channels, c.core_channels, 3);
  bn("rmac.bn", c.rmac_channels);
  out.push_back({"classifier.weight", {c.num_classes, c.rmac_channels}, K::linear});

  conv("fpn.conv1", c.fpn_channels, c.core_channels, 3);
  bias("fpn.conv1", c.fpn_channels);
  conv("fpn.conv2", c.fpn_channels, c.fpn_channels, 3);
  bias("fpn.conv2", c.fpn_channels);
  conv("fpn.lateral3", c.fpn_channels, t3, 1);
  bias("fpn.lateral3", c.fpn_channels);
  conv("fpn.lateral2", c.fpn_channels, t2, 1);
  bias("fpn.lateral2", c.fpn_channels);
  conv("fpn.mask_head", c.mask_classes, c.fpn_channels, 3);
  bias("fpn.mask_head", c.mask_classes);
  return out;
}

std::vector<std::string> batch_norm_layers(const YNetConfig& c) {
  std::vector<std::string> out;
  for (const ParamSpec& p : param_layout(c)) {
    if (p.kind == ParamSpec::Kind::bn_scale) out.push_back(p.name.substr(0, p.name.size() - 7));
  }
  return out;
}

const Tensor& YNetParams::weight(const std::string& name) const {
  auto it = weights.find(name);
  if (it == weights.end()) throw ShapeError("no parameter named " + name);
  return it->second;
}

bool YNetParams::identical(const YNetParams& other) const {
  if (!(config == other.config) || weights.size() != other.weights.size() ||
      bn_stats.size() != other.bn_stats.size()) {
    return false;
  }
  for (const auto& [name, t] : weights) {
    auto it = other.weights.find(name);
    if (it == other.weights.end() || !t.identical(it->second)) return false;
  }
  for (const auto& [name, s] : bn_stats) {
    auto it = other.bn_stats.find(name);
    if (it == other.bn_stats.end() || !s.mean.identical(it->second.mean) || !s.var.identical(it->second.var))
      return false;
  }
  return true;
}

bool YNetParams::all_finite() const {
  for (const auto& [_, t] : weights)
    if (!t.all_finite()) return false;
  for (const auto& [_, s] : bn_stats)
    if (!s.mean.all_finite() || !s.var.all_finite()) return false;
  return true;
}

YNetParams build_model(const YNetConfig& config, uint64_t seed) {
  config.validate();
  YNetParams p;
  p.config = config;
  std::mt19937_64 rng(seed);
  for (const ParamSpec& spec : param_layout(config)) {
    Tensor t(spec.shape);
    switch (spec.kind) {
      case ParamSpec::Kind::conv:
      case ParamSpec::Kind::linear: {
        int64_t fan_in = 1;
        for (size_t i = 1; i < spec.shape.size(); ++i) fan_in *= spec.shape[i];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (double& v : t.data()) v = dist(rng);
        break;
      }
      case ParamSpec::Kind::bn_scale:
        t.fill(1.0);
        break;
      case ParamSpec::Kind::bias:
      case ParamSpec::Kind::bn_shift:
        break;
    }
    p.weights.emplace(spec.name, std::move(t));
  }
  for (const std::string& name : batch_norm_layers(config)) {
    const int64_t ch = p.weights.at(name + ".weight").numel();
    p.bn_stats.emplace(name, nn::BatchNormStats{Tensor({ch}, 0.0), Tensor({ch}, 1.0)});
  }
  return p;
}

YNetGraph::YNetGraph(Tape& tape, YNetParams& params, Mode mode)
    : tape_(tape), params_(&params), mutable_params_(&params), training_(mode == Mode::train) {}

YNetGraph::YNetGraph(Tape& tape, const YNetParams& params)
    : tape_(tape), params_(&params), mutable_params_(nullptr), training_(false) {}

Var YNetGraph::weight(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Tensor& t = params_->weight(name);
  Var v = training_ ? tape_.param(t) : tape_.constant(t);
  bound_.emplace(name, v);
  return v;
}

void YNetGraph::bind(const std::string& name, Var v) {
  if (v.shape() != params_->weight(name).shape()) {
    throw ShapeError("bind: " + name + " expects " + to_string(params_->weight(name).shape()) + ", got " +
                     to_string(v.shape()));
  }
  bound_[name] = v;
}

Var YNetGraph::conv(Var x, const std::string& name, int stride, int padding) {
  return nn::conv2d(x, weight(name + ".weight"), stride, padding);
}

Var YNetGraph::bn(Var x, const std::string& name) {
  Var g = weight(name + ".weight");
  Var b = weight(name + ".bias");
  if (training_) return nn::batch_norm_2d(x, g, b, mutable_params_->bn_stats.at(name), true);
  return nn::batch_norm_2d(x, g, b, params_->bn_stats.at(name));
}

Var YNetGraph::residual_block(Var x, const std::string& name, int stride) {
  const int cin = static_cast<int>(x.shape()[1]);
  const int cout = static_cast<int>(params_->weight(name + ".conv1.weight").dim(0));
  Var y = nn::relu(bn(conv(x, name + ".conv1", stride, 1), name + ".bn1"));
  y = bn(conv(y, name + ".conv2", 1, 1), name + ".bn2");
  Var shortcut = has_projection(cin, cout, stride) ? bn(conv(x, name + ".proj", stride, 0), name + ".proj_bn") : x;
  return nn::relu(nn::add(y, shortcut));
}

YNetGraph::Backbone YNetGraph::backbone(Var image) {
  const YNetConfig& c = params_->config;
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != c.in_channels || s[2] != c.input_size || s[3] != c.input_size) {
    throw ShapeError("backbone: expected N x " + std::to_string(c.in_channels) + " x " +
                     std::to_string(c.input_size) + " x " + std::to_string(c.input_size) + " image, got " +
                     to_string(s));
  }
  Var x = nn::relu(bn(conv(image, "stem.conv", 2, 3), "stem.bn"));
  x = nn::max_pool_2d(x, 3, 2, 1);
  Backbone out;
  out.b1 = residual_block(x, "block1", block_stride(1));
  out.b2 = residual_block(out.b1, "block2", block_stride(2));
  out.b3 = residual_block(out.b2, "block3", block_stride(3));
  // No ReLU here: hash bits are signs of the core activations.
  out.core = bn(conv(out.b3, "core.conv", 2, 1), "core.bn");
  return out;
}

Var YNetGraph::rmac_features(Var core) { return nn::relu(bn(conv(core, "rmac.conv", 1, 1), "rmac.bn")); }

Var YNetGraph::rmac_pool(Var features) {
  const Shape& s = features.shape();
  if (s.size() != 4) throw ShapeError("rmac_pool: expected rank-4 features, got " + to_string(s));
  const auto regions = rmac_grid(s[3], s[2], params_->config.rmac_scales, params_->config.overlap_min);
  Var acc;
  for (const nn::Rect& r : regions) {
    Var v = nn::l2_normalize(nn::region_max_pool(features, r));
    acc = acc.valid() ? nn::add(acc, v) : v;
  }
  return nn::l2_normalize(acc);
}

Var YNetGraph::classify(Var descriptor) {
  return nn::linear(descriptor, nn::l2_normalize(weight("classifier.weight")));
}

YNetGraph::Fpn YNetGraph::fpn(const Backbone& bb) {
  auto conv_b = [&](Var x, const std::string& name, int padding) {
    return nn::add_channel_bias(conv(x, name, 1, padding), weight(name + ".bias"));
  };
  Fpn out;
  Var top = nn::relu(conv_b(bb.core, "fpn.conv1", 1));
  top = conv_b(top, "fpn.conv2", 1);
  out.t3 = nn::add(nn::bilinear_upsample_2x(top), conv_b(bb.b3, "fpn.lateral3", 0));
  out.t2 = nn::add(nn::bilinear_upsample_2x(out.t3), conv_b(bb.b2, "fpn.lateral2", 0));
  out.t1 = nn::add(nn::bilinear_upsample_2x(out.t2), bb.b1);
  const int64_t factor = params_->config.input_size / out.t1.shape()[2];
  out.mask_logits = nn::bilinear_upsample(conv_b(out.t1, "fpn.mask_head", 1), static_cast<int>(factor));
  return out;
}

Tensor as_batch(const Tensor& image) {
  if (image.rank() == 4) return image;
  if (image.rank() == 3) return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  throw ShapeError("expected a C x H x W or N x C x H x W image, got " + to_string(image.shape()));
}

BackboneOutput forward_backbone(const YNetParams& params, const Tensor& image) {
  Tape tape;
  YNetGraph g(tape, params);
  auto bb = g.backbone(tape.constant(as_batch(image)));
  return {bb.b1.value(), bb.b2.value(), bb.b3.value(), bb.core.value()};
}

BackboneOutput forward_backbone(YNetParams& params, const Tensor& image, Mode mode) {
  Tape tape;
  YNetGraph g(tape, params, mode);
  auto bb = g.backbone(tape.constant(as_batch(image)));
  return {bb.b1.value(), bb.b2.value(), bb.b3.value(), bb.core.value()};
}

std::pair<double, double> rmac_scale_overlap(int64_t width, int64_t height, int s) {
  if (s == 0) return {1.0, 1.0};
  const double side = 2.0 * static_cast<double>(std::min(width, height)) / (s + 2);
  auto axis = [&](int64_t extent) {
    const double step = (static_cast<double>(extent) - side) / s;
    return (side - step) / side;
  };
  return {axis(width), axis(height)};
}

std::vector<nn::Rect> rmac_grid(int64_t width, int64_t height, int scales, double overlap_min) {
  if (width < 2 || height < 2) throw ConfigError("rmac_grid: feature map must be at least 2 x 2");
  if (scales < 1) throw ConfigError("rmac_grid: need at least one scale");
  std::vector<nn::Rect> out;
  for (int s = 0; s < scales; ++s) {
    const double side = 2.0 * static_cast<double>(std::min(width, height)) / (s + 2);
    const auto [ox, oy] = rmac_scale_overlap(width, height, s);
    if (ox < overlap_min || oy < overlap_min) {
      throw ConfigError("rmac_grid: scale " + std::to_string(s) + " window overlap " +
                        std::to_string(std::min(ox, oy)) + " is below the required " + std::to_string(overlap_min));
    }
    const int64_t iside = std::max<int64_t>(1, std::llround(side));
    auto starts = [&](int64_t extent) {
      std::vector<int64_t> v;
      for (int i = 0; i <= s; ++i) {
        const double pos = s == 0 ? (static_cast<double>(extent) - side) / 2.0
                                  : i * (static_cast<double>(extent) - side) / s;
        v.push_back(std::clamp<int64_t>(std::llround(pos), 0, extent - 1));
      }
      return v;
    };
    for (int64_t y : starts(height))
      for (int64_t x : starts(width))
        out.push_back({x, y, std::min(x + iside, width), std::min(y + iside, height)});
  }
  return out;
}

Tensor rmac_descriptor(const YNetParams& params, const Tensor& core) {
  Tape tape;
  YNetGraph g(tape, params);
  return g.rmac_descriptor(tape.constant(as_batch(core))).value();
}

Tensor rmac_pool(const Tensor& features, int scales, double overlap_min) {
  YNetParams p;
  p.config.rmac_scales = scales;
  p.config.overlap_min = overlap_min;
  Tape tape;
  YNetGraph g(tape, p);
  return g.rmac_pool(tape.constant(as_batch(features))).value();
}

Tensor classify_logits(const YNetParams& params, const Tensor& descriptor) {
  Tape tape;
  YNetGraph g(tape, params);
  Tensor d = descriptor.rank() == 1 ? descriptor.reshaped({1, descriptor.dim(0)}) : descriptor;
  return g.classify(tape.constant(d)).value();
}

FpnOutput fpn_forward(const YNetParams& params, const BackboneOutput& bb) {
  Tape tape;
  YNetGraph g(tape, params);
  YNetGraph::Backbone vars{tape.constant(bb.b1), tape.constant(bb.b2), tape.constant(bb.b3),
                           tape.constant(bb.core)};
  auto f = g.fpn(vars);
  return {f.t3.value(), f.t2.value(), f.t1.value(), f.mask_logits.value()};
}

Tensor feature_heatmap(const Tensor& features, int64_t target) {
  const Tensor x = as_batch(features);
  if (x.dim(0) != 1) throw ShapeError("feature_heatmap: expects a single feature map");
  if (target < 1) throw ShapeError("feature_heatmap: target must be >= 1");
  Tape tape;
  Var m = nn::channel_group_mean(tape.constant(x), 1);
  Tensor r = nn::bilinear_resize(m, target, target).value().reshaped({target, target});
  const auto [lo_it, hi_it] = std::minmax_element(r.data().begin(), r.data().end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    r.fill(0.5);
    return r;
  }
  for (double& v : r.data()) v = (v - lo) / (hi - lo);
  return r;
}

}  // namespace ynet
