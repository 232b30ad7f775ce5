#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ynet/dataset.hpp"
#include "ynet/losses.hpp"
#include "ynet/model.hpp"

namespace ynet {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.001;
  int batch_size = 32;
  int epochs = 50;
  uint64_t seed = 0;
  CircleLossConfig circle;
  CoupledLossConfig loss;
  int folds = 5;
  // Branch switches for ablations. At least one must stay on.
  bool use_fpn = true;
  bool use_rmac = true;
  // Stop after this many optimizer steps (0 = run all epochs).
  int max_steps = 0;

  // Throws ConfigError; batch_size must not exceed dataset_size.
  void validate(size_t dataset_size) const;
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double loss = 0, loss_seg = 0, loss_cls = 0, omega = 0;
  bool operator==(const StepRecord&) const = default;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  bool operator==(const TrainHistory&) const = default;

  // step,loss,loss_seg,loss_cls,omega
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  YNetParams params;
  TrainHistory history;
};

// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochRecord&, const YNetParams&)>;

/// SGD with momentum and weight decay on the coupled loss.
/// Batch order is a seeded shuffle per epoch. Throws TrainingError on a
/// non-finite loss, naming the step and the batch's sample ids.
TrainResult train(const YNetParams& init, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// v <- momentum * v - lr * (g + weight_decay * theta); theta <- theta + v.
void sgd_update(Tensor& theta, const Tensor& grad, Tensor& velocity, const TrainConfig& cfg);

struct LossTerms {
  Var total, seg, cls;
  double omega = 0;
};

/// Training objective for one batch on `graph`. With one branch disabled the
/// other branch's loss is the total (omega 0 or 1).
LossTerms composite_loss(YNetGraph& graph, Var images, const Tensor& masks, const std::vector<int>& labels,
                         const TrainConfig& cfg, CoupledLossState& state);

Tensor stack_images(const std::vector<Sample>& data, const std::vector<size_t>& indices);
Tensor stack_masks(const std::vector<Sample>& data, const std::vector<size_t>& indices);

struct Accuracy {
  double classification = 0;
  double pixel = 0;
  double score() const { return 0.5 * (classification + pixel); }
};

// Eval-mode argmax accuracy of the classifier and of the mask head.
Accuracy evaluate_accuracy(const YNetParams& params, const std::vector<Sample>& data, int batch_size = 32);

struct KFoldResult {
  YNetParams params;
  int best_fold = 0;
  std::vector<Accuracy> fold_scores;
  std::vector<std::string> warnings;
};

// Fold id per sample: class-stratified round robin over a seeded shuffle,
// unstratified (with a warning) when a class has fewer than `folds` samples.
std::vector<int> assign_folds(const std::vector<Sample>& data, int folds, uint64_t seed,
                              std::vector<std::string>* warnings = nullptr);

/// Trains one model per fold and keeps the best held-out
/// (classification + pixel accuracy) / 2; ties go to the lowest fold.
KFoldResult kfold_select(const YNetConfig& model, const std::vector<Sample>& data, const TrainConfig& cfg);

}  // namespace ynet
