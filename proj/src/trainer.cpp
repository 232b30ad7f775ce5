#include "ynet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "ynet/errors.hpp"
#include "ynet/ops.hpp"

namespace ynet {

void TrainConfig::validate(size_t dataset_size) const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (!use_fpn && !use_rmac) throw ConfigError("at least one of the FPN and R-MAC branches must be enabled");
  if (dataset_size == 0) throw ConfigError("training set is empty");
  if (static_cast<size_t>(batch_size) > dataset_size) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds the dataset size " +
                      std::to_string(dataset_size));
  }
  circle.validate();
  loss.validate();
}

std::string TrainHistory::csv() const {
  std::string out = "step,loss,loss_seg,loss_cls,omega\n";
  char line[160];
  for (const StepRecord& r : steps) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g\n", r.step, r.loss, r.loss_seg, r.loss_cls,
                  r.omega);
    out += line;
  }
  return out;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << csv();
}

Tensor stack_images(const std::vector<Sample>& data, const std::vector<size_t>& indices) {
  const Sample& first = data.at(indices.at(0));
  Shape shape{static_cast<int64_t>(indices.size())};
  shape.insert(shape.end(), first.image.shape().begin(), first.image.shape().end());
  Tensor out(shape);
  const int64_t per = first.image.numel();
  for (size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = data.at(indices[i]);
    if (s.image.shape() != first.image.shape()) throw ShapeError("sample " + s.id + " has a different image size");
    std::copy(s.image.ptr(), s.image.ptr() + per, out.ptr() + static_cast<int64_t>(i) * per);
  }
  return out;
}

Tensor stack_masks(const std::vector<Sample>& data, const std::vector<size_t>& indices) {
  const Sample& first = data.at(indices.at(0));
  Tensor out({static_cast<int64_t>(indices.size()), first.mask.dim(0), first.mask.dim(1)});
  const int64_t per = first.mask.numel();
  for (size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = data.at(indices[i]);
    if (s.mask.shape() != first.mask.shape()) throw ShapeError("sample " + s.id + " has a different mask size");
    std::copy(s.mask.ptr(), s.mask.ptr() + per, out.ptr() + static_cast<int64_t>(i) * per);
  }
  return out;
}

LossTerms composite_loss(YNetGraph& graph, Var images, const Tensor& masks, const std::vector<int>& labels,
                         const TrainConfig& cfg, CoupledLossState& state) {
  LossTerms out;
  const auto bb = graph.backbone(images);
  if (cfg.use_rmac) out.cls = circle_loss(graph.classify(graph.rmac_descriptor(bb.core)), labels, cfg.circle);
  if (cfg.use_fpn) out.seg = pixel_ce_loss(graph.fpn(bb).mask_logits, masks);
  if (cfg.use_rmac && cfg.use_fpn) {
    out.total = coupled_loss(out.seg, out.cls, cfg.loss, state, &out.omega);
  } else if (cfg.use_rmac) {
    out.total = out.cls;
    out.omega = 0.0;
  } else {
    out.total = out.seg;
    out.omega = 1.0;
  }
  return out;
}

namespace {

std::string batch_ids(const std::vector<Sample>& data, const std::vector<size_t>& batch) {
  std::string ids;
  for (size_t i : batch) ids += (ids.empty() ? "" : ",") + data[i].id;
  return ids;
}

}  // namespace

TrainResult train(const YNetParams& init, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate(data.size());
  init.config.validate();
  for (const Sample& s : data) {
    if (s.label < 0 || s.label >= init.config.num_classes) {
      throw ConfigError("sample " + s.id + " has label " + std::to_string(s.label) + " outside [0, " +
                        std::to_string(init.config.num_classes) + ")");
    }
  }
  TrainResult result{init, {}};
  YNetParams& params = result.params;
  std::map<std::string, Tensor> velocity;
  CoupledLossState state;
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(data.size());
  int step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const std::vector<size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> labels;
      for (size_t i : batch) labels.push_back(data[i].label);

      Tape tape;
      YNetGraph graph(tape, params, Mode::train);
      const LossTerms terms =
          composite_loss(graph, tape.constant(stack_images(data, batch)), stack_masks(data, batch), labels, cfg, state);
      StepRecord rec{step, epoch, terms.total.value().item(), terms.seg.valid() ? terms.seg.value().item() : 0.0,
                     terms.cls.valid() ? terms.cls.value().item() : 0.0, terms.omega};
      if (!std::isfinite(rec.loss) || !std::isfinite(rec.loss_seg) || !std::isfinite(rec.loss_cls)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                            "; loss_seg=" + std::to_string(rec.loss_seg) + ", loss_cls=" +
                            std::to_string(rec.loss_cls) + ") on batch [" + batch_ids(data, batch) + "]");
      }
      tape.backward(terms.total);
      for (const auto& [name, var] : graph.bound()) {
        if (!tape.grad(var).all_finite()) {
          throw TrainingError("non-finite gradient for " + name + " at step " + std::to_string(step) + " (epoch " +
                              std::to_string(epoch) + ") on batch [" + batch_ids(data, batch) + "]");
        }
      }

      for (const auto& [name, var] : graph.bound()) {
        Tensor& theta = params.weights.at(name);
        const Tensor g = tape.grad(var);
        auto [it, fresh] = velocity.try_emplace(name, theta.shape());
        sgd_update(theta, g, it->second, cfg);
      }
      result.history.steps.push_back(rec);
      epoch_loss += rec.loss;
      ++epoch_steps;
      ++step;
    }
    if (epoch_steps == 0) break;
    const EpochRecord er{epoch, epoch_loss / epoch_steps};
    result.history.epochs.push_back(er);
    if (on_epoch && !on_epoch(er, params)) break;
  }
  if (!params.all_finite()) throw TrainingError("parameters became non-finite during training");
  return result;
}

void sgd_update(Tensor& theta, const Tensor& grad, Tensor& velocity, const TrainConfig& cfg) {
  for (int64_t i = 0; i < theta.numel(); ++i) {
    velocity[i] = cfg.momentum * velocity[i] - cfg.lr * (grad[i] + cfg.weight_decay * theta[i]);
    theta[i] += velocity[i];
  }
}

Accuracy evaluate_accuracy(const YNetParams& params, const std::vector<Sample>& data, int batch_size) {
  if (data.empty()) throw ConfigError("accuracy of an empty set is undefined");
  int64_t correct = 0, pixels = 0, pixel_correct = 0;
  for (size_t start = 0; start < data.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> batch;
    for (size_t i = start; i < std::min(data.size(), start + static_cast<size_t>(batch_size)); ++i) batch.push_back(i);
    Tape tape;
    YNetGraph graph(tape, params);
    const auto bb = graph.backbone(tape.constant(stack_images(data, batch)));
    const Tensor& cos = graph.classify(graph.rmac_descriptor(bb.core)).value();
    const Tensor& logits = graph.fpn(bb).mask_logits.value();
    const int64_t k = cos.dim(1);
    const int64_t mk = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    for (size_t b = 0; b < batch.size(); ++b) {
      const double* row = cos.ptr() + static_cast<int64_t>(b) * k;
      if (std::max_element(row, row + k) - row == data[batch[b]].label) ++correct;
      const Tensor& mask = data[batch[b]].mask;
      for (int64_t p = 0; p < h * w; ++p) {
        int64_t best = 0;
        for (int64_t c = 1; c < mk; ++c) {
          if (logits[(static_cast<int64_t>(b) * mk + c) * h * w + p] > logits[(static_cast<int64_t>(b) * mk + best) * h * w + p]) best = c;
        }
        if (best == (mask[p] >= 0.5 ? 1 : 0)) ++pixel_correct;
        ++pixels;
      }
    }
  }
  return {static_cast<double>(correct) / static_cast<double>(data.size()),
          static_cast<double>(pixel_correct) / static_cast<double>(pixels)};
}

std::vector<int> assign_folds(const std::vector<Sample>& data, int folds, uint64_t seed,
                              std::vector<std::string>* warnings) {
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (data.size() < static_cast<size_t>(folds)) {
    throw ConfigError("k-fold needs at least " + std::to_string(folds) + " samples");
  }
  std::mt19937_64 rng(seed);
  std::map<int, std::vector<size_t>> strata;
  for (size_t i = 0; i < data.size(); ++i) strata[data[i].label].push_back(i);
  bool stratified = true;
  for (const auto& [label, idx] : strata) {
    if (idx.size() < static_cast<size_t>(folds)) {
      stratified = false;
      if (warnings) {
        warnings->push_back("class " + std::to_string(label) + " has fewer than " + std::to_string(folds) +
                            " samples; using unstratified folds");
      }
      break;
    }
  }
  std::vector<int> fold(data.size(), 0);
  size_t counter = 0;
  auto deal = [&](std::vector<size_t> idx) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (size_t i : idx) fold[i] = static_cast<int>(counter++ % static_cast<size_t>(folds));
  };
  if (stratified) {
    for (const auto& [label, idx] : strata) deal(idx);
  } else {
    std::vector<size_t> all(data.size());
    std::iota(all.begin(), all.end(), size_t{0});
    deal(all);
  }
  return fold;
}

KFoldResult kfold_select(const YNetConfig& model, const std::vector<Sample>& data, const TrainConfig& cfg) {
  KFoldResult out;
  const std::vector<int> fold = assign_folds(data, cfg.folds, cfg.seed, &out.warnings);
  double best = -1.0;
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<Sample> train_set, held_out;
    for (size_t i = 0; i < data.size(); ++i) (fold[i] == f ? held_out : train_set).push_back(data[i]);
    TrainConfig fc = cfg;
    fc.seed = cfg.seed + static_cast<uint64_t>(f);
    fc.batch_size = std::min<int>(cfg.batch_size, static_cast<int>(train_set.size()));
    TrainResult r = train(build_model(model, fc.seed), train_set, fc);
    const Accuracy acc = evaluate_accuracy(r.params, held_out);
    out.fold_scores.push_back(acc);
    if (acc.score() > best) {
      best = acc.score();
      out.best_fold = f;
      out.params = std::move(r.params);
    }
  }
  return out;
}

}  // namespace ynet
