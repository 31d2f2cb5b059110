#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "contfuse/augment.hpp"
#include "contfuse/eval.hpp"
#include "contfuse/loss.hpp"
#include "contfuse/model.hpp"
#include "contfuse/optim.hpp"

namespace contfuse {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimizerConfig {
  Real lr = 1e-3;
  Real beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Real weight_decay = 0.0;
  std::vector<Real> decay_at{0.6, 0.9};  // fractions of the total epoch count
  Real decay_factor = 0.1;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("optimizer: lr must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("optimizer: betas must lie in [0, 1)");
    if (!(eps > 0) || weight_decay < 0) throw ConfigError("optimizer: eps must be positive, weight_decay non-negative");
    for (Real f : decay_at)
      if (!(f > 0 && f <= 1)) throw ConfigError("optimizer: decay_at fractions must lie in (0, 1]");
    if (!(decay_factor > 0)) throw ConfigError("optimizer: decay_factor must be positive");
  }

  /// Learning rate for a 0-based epoch: one decay per milestone already reached.
  Real lr_at(std::size_t epoch, std::size_t total_epochs) const {
    Real r = lr;
    for (Real f : decay_at)
      if (static_cast<Real>(epoch) >= std::round(f * static_cast<Real>(total_epochs))) r *= decay_factor;
    return r;
  }
  bool operator==(const OptimizerConfig&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  std::size_t checkpoint_every = 1;  // epochs; 0 writes only the final checkpoint
  bool shuffle = true;
  bool augment = false;
  AugmentationConfig augmentation;
  LossConfig loss;
  OptimizerConfig optimizer;

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw ConfigError("train: epochs and batch_size must be >= 1");
    loss.assignment.validate();
    optimizer.validate();
    if (augment) augmentation.validate();
  }
  bool operator==(const TrainConfig&) const = default;
};

struct StepRecord {
  std::size_t step = 0, epoch = 0;
  Real lr = 0;
  Real loss = 0, loss_cls = 0, loss_reg = 0;  // means over the batch
  std::size_t n = 0, n_pos = 0;              // sums over the batch
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(std::size_t epoch, bool last)> on_epoch_end;
};

/// Derived seed for per-step randomness (mining, augmentation, shuffling).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// One optimisation step on a batch; the loss is averaged over its scenes.
inline StepRecord train_step(const Detector& model, Adam& opt, const std::vector<const SceneSample*>& batch,
                             const LossConfig& loss_cfg, std::uint64_t step_seed) {
  opt.zero_grad();
  std::vector<Tensor> totals;
  StepRecord rec;
  const Real inv = 1.0 / static_cast<Real>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor head = model.forward(*batch[i]);
    const LossBreakdown lb = detection_loss(head, model.anchors(), batch[i]->boxes, loss_cfg, mix_seed(step_seed, i));
    totals.push_back(lb.total);
    rec.loss += lb.value * inv;
    rec.loss_cls += lb.cls * inv;
    rec.loss_reg += lb.reg * inv;
    rec.n += lb.n;
    rec.n_pos += lb.n_pos;
  }
  if (!std::isfinite(rec.loss)) throw NumericError("non-finite loss " + std::to_string(rec.loss));
  Tensor total = totals.front();
  for (std::size_t i = 1; i < totals.size(); ++i) total = add(total, totals[i]);
  total = scale(total, inv);
  if (total.requires_grad()) {
    backward(total);
    opt.step();
  }
  return rec;
}

/// Epoch loop over `scenes` in batches. Every random choice derives from `seed`.
inline std::vector<StepRecord> train(const Detector& model, const std::vector<SceneSample>& scenes,
                                     const TrainConfig& cfg, std::uint64_t seed, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (scenes.empty()) throw ConfigError("train: no scenes");
  AdamOptions ao;
  ao.lr = cfg.optimizer.lr;
  ao.beta1 = cfg.optimizer.beta1;
  ao.beta2 = cfg.optimizer.beta2;
  ao.eps = cfg.optimizer.eps;
  ao.weight_decay = cfg.optimizer.weight_decay;
  Adam opt(model.parameters(), ao);
  std::vector<StepRecord> log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(cfg.optimizer.lr_at(epoch, cfg.epochs));
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);
    if (cfg.shuffle) {
      std::mt19937_64 rng(mix_seed(seed, 1000003 + epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<SceneSample> augmented;
      std::vector<const SceneSample*> batch;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      augmented.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        if (cfg.augment) {
          augmented.push_back(augment(scenes[order[i]], cfg.augmentation, mix_seed(seed, 2 * step + 7 * i + 1)));
          batch.push_back(&augmented.back());
        } else {
          batch.push_back(&scenes[order[i]]);
        }
      }
      StepRecord rec = train_step(model, opt, batch, cfg.loss, mix_seed(seed, step));
      rec.step = step++;
      rec.epoch = epoch;
      rec.lr = opt.lr();
      if (hooks.on_step) hooks.on_step(rec);
      log.push_back(rec);
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, epoch + 1 == cfg.epochs);
  }
  return log;
}

/// Detections for every scene paired with its labels.
inline std::vector<FrameResult> run_detector(const Detector& model, const std::vector<SceneSample>& scenes) {
  std::vector<FrameResult> out;
  for (const SceneSample& s : scenes) out.push_back({model.detect(s), s.boxes});
  return out;
}

}  // namespace contfuse
