#pragma once

#include <span>
#include <vector>

#include "ynet/autograd.hpp"

namespace ynet {

struct CircleLossConfig {
  double gamma = 32.0;
  double margin = 0.25;
  void validate() const;
};

enum class CouplingMode { fixed, balanced };

struct CoupledLossConfig {
  double omega = 0.5;  // initial (balanced) or constant (fixed) weight on the segmentation loss
  CouplingMode mode = CouplingMode::balanced;
  double ema_decay = 0.9;
  double omega_min = 0.1;
  double omega_max = 0.9;
  void validate() const;
};

// Running loss magnitudes for the balanced coupling.
struct CoupledLossState {
  double mean_seg = 0.0;
  double mean_cls = 0.0;
  double omega = 0.5;
  bool initialized = false;
};

/// Class-level circle loss on cosine similarities:
///   log(1 + exp(-g*ap*(sp - (1-m))) * sum_j exp(g*an_j*(sn_j - m)))
/// with ap = max(0, 1+m-sp), an_j = max(0, sn_j+m). The weights ap, an_j are
/// part of the differentiated function.
double circle_loss(std::span<const double> cosines, int label, const CircleLossConfig& cfg);

// Batch mean of circle_loss over rows of an N x K cosine matrix.
Var circle_loss(Var cosines, const std::vector<int>& labels, const CircleLossConfig& cfg);

// Mean two-class pixel cross-entropy. mask holds {0,1} and is N x H x W
// (or H x W for N = 1).
Var pixel_ce_loss(Var mask_logits, const Tensor& mask);

/// Picks the segmentation weight for this step and advances `state`.
/// Fixed mode returns cfg.omega. Balanced mode returns 0.5 on the first call
/// (which also seeds the running means) and afterwards
/// clip(m_cls / (m_seg + m_cls)) from the EMA-updated means.
double coupled_weight(double loss_seg, double loss_cls, const CoupledLossConfig& cfg, CoupledLossState& state);

struct CoupledLossValue {
  double loss;
  double omega;
};

// omega * loss_seg + (1 - omega) * loss_cls. Throws on negative inputs.
CoupledLossValue coupled_loss(double loss_seg, double loss_cls, const CoupledLossConfig& cfg,
                              CoupledLossState& state);
// Tape version; omega is a constant of the graph.
Var coupled_loss(Var loss_seg, Var loss_cls, const CoupledLossConfig& cfg, CoupledLossState& state,
                 double* omega_out = nullptr);

}  // namespace ynet
