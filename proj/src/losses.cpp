#include "ynet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "ynet/errors.hpp"
#include "ynet/ops.hpp"

namespace ynet {
namespace {

struct CircleTerms {
  double loss = 0.0;
  std::vector<double> grad;  // dL/dcos
};

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }
double sigmoid(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

CircleTerms circle_terms(const double* cos, int64_t k, int label, const CircleLossConfig& cfg) {
  CircleTerms out;
  out.grad.assign(static_cast<size_t>(k), 0.0);
  if (k == 1) return out;
  const double g = cfg.gamma, m = cfg.margin;
  const double op = 1.0 + m, on = -m, dp = 1.0 - m, dn = m;

  const double sp = cos[label];
  const double ap = std::max(0.0, op - sp);
  const double zp = -g * ap * (sp - dp);
  const double dzp = ap > 0.0 ? -g * (op + dp - 2.0 * sp) : 0.0;

  std::vector<double> zn, dzn;
  double zmax = -std::numeric_limits<double>::infinity();
  for (int64_t j = 0; j < k; ++j) {
    if (j == label) continue;
    const double sn = cos[j];
    const double an = std::max(0.0, sn - on);
    zn.push_back(g * an * (sn - dn));
    dzn.push_back(an > 0.0 ? g * (2.0 * sn - on - dn) : 0.0);
    zmax = std::max(zmax, zn.back());
  }
  double se = 0.0;
  for (double z : zn) se += std::exp(z - zmax);
  const double lse = zmax + std::log(se);
  const double t = zp + lse;
  out.loss = softplus(t);
  const double s = sigmoid(t);
  out.grad[static_cast<size_t>(label)] = s * dzp;
  size_t idx = 0;
  for (int64_t j = 0; j < k; ++j) {
    if (j == label) continue;
    const double w = std::exp(zn[idx] - lse);
    out.grad[static_cast<size_t>(j)] = s * w * dzn[idx];
    ++idx;
  }
  return out;
}

}  // namespace

void CircleLossConfig::validate() const {
  if (!(gamma > 0.0)) throw ConfigError("circle loss gamma must be > 0");
  if (!(margin > 0.0 && margin < 1.0)) throw ConfigError("circle loss margin must lie in (0, 1)");
}

void CoupledLossConfig::validate() const {
  if (!(omega_min > 0.0 && omega_min <= omega_max && omega_max < 1.0 + 1e-12)) {
    throw ConfigError("coupled loss omega clip range must satisfy 0 < min <= max <= 1");
  }
  if (!(omega >= 0.0 && omega <= 1.0)) throw ConfigError("coupled loss omega must lie in [0, 1]");
  if (mode == CouplingMode::balanced && (omega < omega_min || omega > omega_max)) {
    throw ConfigError("initial omega lies outside the clip range");
  }
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in [0, 1)");
}

double circle_loss(std::span<const double> cosines, int label, const CircleLossConfig& cfg) {
  if (label < 0 || label >= static_cast<int>(cosines.size())) {
    throw ConfigError("circle_loss: label " + std::to_string(label) + " out of range for " +
                      std::to_string(cosines.size()) + " classes");
  }
  return circle_terms(cosines.data(), static_cast<int64_t>(cosines.size()), label, cfg).loss;
}

Var circle_loss(Var cosines, const std::vector<int>& labels, const CircleLossConfig& cfg) {
  const Tensor& c = cosines.value();
  expect_rank(c, 2, "circle_loss cosines");
  const int64_t n = c.dim(0), k = c.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) throw ShapeError("circle_loss: one label per row required");
  auto grad = std::make_shared<Tensor>(c.shape());
  double total = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    const int label = labels[static_cast<size_t>(r)];
    if (label < 0 || label >= k) {
      throw ConfigError("circle_loss: label " + std::to_string(label) + " out of range for " + std::to_string(k) +
                        " classes");
    }
    CircleTerms t = circle_terms(c.ptr() + r * k, k, label, cfg);
    total += t.loss;
    std::copy(t.grad.begin(), t.grad.end(), grad->ptr() + r * k);
  }
  const double inv = 1.0 / static_cast<double>(n);
  Tape* tape = cosines.tape;
  return tape->record(Tensor::scalar(total * inv), {cosines}, [=](const Tensor& g) {
    double* d = tape->grad_buffer(cosines).ptr();
    for (int64_t i = 0; i < grad->numel(); ++i) d[i] += g[0] * inv * (*grad)[i];
  });
}

Var pixel_ce_loss(Var mask_logits, const Tensor& mask) {
  const Shape& s = mask_logits.shape();
  if (s.size() != 4) throw ShapeError("pixel_ce_loss: logits must be N x K x H x W");
  const int64_t expected = s[0] * s[2] * s[3];
  if (mask.numel() != expected) {
    throw ShapeError("pixel_ce_loss: mask " + to_string(mask.shape()) + " does not cover logits " + to_string(s));
  }
  std::vector<int> targets(static_cast<size_t>(expected));
  for (int64_t i = 0; i < expected; ++i) targets[static_cast<size_t>(i)] = mask[i] >= 0.5 ? 1 : 0;
  return nn::softmax_cross_entropy(mask_logits, targets);
}

double coupled_weight(double loss_seg, double loss_cls, const CoupledLossConfig& cfg, CoupledLossState& state) {
  if (cfg.mode == CouplingMode::fixed) {
    state.omega = cfg.omega;
    return cfg.omega;
  }
  if (!state.initialized) {
    state.mean_seg = loss_seg;
    state.mean_cls = loss_cls;
    state.initialized = true;
    state.omega = cfg.omega;
    return state.omega;
  }
  state.mean_seg = cfg.ema_decay * state.mean_seg + (1.0 - cfg.ema_decay) * loss_seg;
  state.mean_cls = cfg.ema_decay * state.mean_cls + (1.0 - cfg.ema_decay) * loss_cls;
  const double denom = state.mean_seg + state.mean_cls;
  const double raw = denom > 0.0 ? state.mean_cls / denom : cfg.omega;
  state.omega = std::clamp(raw, cfg.omega_min, cfg.omega_max);
  return state.omega;
}

CoupledLossValue coupled_loss(double loss_seg, double loss_cls, const CoupledLossConfig& cfg,
                              CoupledLossState& state) {
  if (!(loss_seg >= 0.0) || !(loss_cls >= 0.0) || !std::isfinite(loss_seg) || !std::isfinite(loss_cls)) {
    throw ConfigError("coupled_loss: losses must be finite and non-negative");
  }
  const double w = coupled_weight(loss_seg, loss_cls, cfg, state);
  return {w * loss_seg + (1.0 - w) * loss_cls, w};
}

Var coupled_loss(Var loss_seg, Var loss_cls, const CoupledLossConfig& cfg, CoupledLossState& state,
                 double* omega_out) {
  const CoupledLossValue v = coupled_loss(loss_seg.value().item(), loss_cls.value().item(), cfg, state);
  if (omega_out) *omega_out = v.omega;
  return nn::weighted_sum(loss_seg, v.omega, loss_cls, 1.0 - v.omega);
}

}  // namespace ynet
