#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "contfuse/box.hpp"
#include "contfuse/ops.hpp"

namespace contfuse {

struct AssignmentConfig {
  /// Radii in meters; a non-positive value means half the anchor's BEV diagonal
  /// (positive) or the full diagonal (negative).
  Real positive_radius = 0.0;
  Real negative_radius = 0.0;
  Real neg_sample_fraction = 0.05;
  std::size_t topk_per_positive = 3;
  std::size_t topk_min = 16;

  void validate() const {
    if (!(neg_sample_fraction > 0.0 && neg_sample_fraction <= 1.0))
      throw ConfigError("neg_sample_fraction must lie in (0, 1]");
    if (positive_radius > 0 && negative_radius > 0 && positive_radius > negative_radius)
      throw ConfigError("positive_radius must not exceed negative_radius");
  }

  Real positive_radius_for(const Anchor& a) const {
    return positive_radius > 0 ? positive_radius : 0.5 * std::hypot(a.w, a.h);
  }
  Real negative_radius_for(const Anchor& a) const {
    return negative_radius > 0 ? negative_radius : std::hypot(a.w, a.h);
  }
  std::size_t topk(std::size_t num_positive) const { return std::max(topk_per_positive * num_positive, topk_min); }

  bool operator==(const AssignmentConfig&) const = default;
};

enum class AnchorRole { Positive, Negative, Ignore };

struct AnchorLabel {
  AnchorRole role = AnchorRole::Ignore;
  std::size_t gt = 0;  // matched box when positive
};

/// Labels anchors by BEV center distance to same-class boxes. The nearest box
/// wins a positive; ties go to the lower box index. Ignore-flagged boxes never
/// produce positives but keep nearby anchors out of the negative set.
inline std::vector<AnchorLabel> assign_anchors(const std::vector<Anchor>& anchors,
                                               const std::vector<DetectionBox>& gts,
                                               const AssignmentConfig& cfg) {
  cfg.validate();
  std::vector<AnchorLabel> out(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Anchor& a = anchors[i];
    Real best = std::numeric_limits<Real>::infinity(), nearest_any = best;
    std::size_t best_gt = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const DetectionBox& b = gts[g];
      if (!b.ignore && b.class_id != a.class_id) continue;
      const Real d = std::hypot(b.x - a.x, b.y - a.y);
      nearest_any = std::min(nearest_any, d);
      if (!b.ignore && d < best) {
        best = d;
        best_gt = g;
      }
    }
    if (best <= cfg.positive_radius_for(a))
      out[i] = {AnchorRole::Positive, best_gt};
    else if (nearest_any > cfg.negative_radius_for(a))
      out[i] = {AnchorRole::Negative, 0};
  }
  return out;
}

/// Samples ceil(fraction·|negatives|) negatives uniformly (seeded partial
/// Fisher–Yates), then keeps the k highest scores. Equal scores keep sample order.
inline std::vector<std::size_t> hard_negative_mining(std::vector<std::size_t> negatives,
                                                     const std::vector<Real>& scores, Real fraction,
                                                     std::size_t k, std::uint64_t seed) {
  const std::size_t take = std::min(
      negatives.size(), static_cast<std::size_t>(std::ceil(fraction * static_cast<Real>(negatives.size()))));
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, negatives.size() - 1);
    std::swap(negatives[i], negatives[pick(rng)]);
  }
  negatives.resize(take);
  std::stable_sort(negatives.begin(), negatives.end(),
                   [&](std::size_t a, std::size_t b) { return scores.at(a) > scores.at(b); });
  if (negatives.size() > k) negatives.resize(k);
  return negatives;
}

/// Mean binary cross-entropy of probabilities p [N] against 0/1 labels.
/// p is clamped to [eps, 1 − eps]; an empty selection gives 0.
inline Tensor classification_loss(const Tensor& p, const std::vector<Real>& labels, Real eps = 1e-7) {
  if (p.numel() != labels.size()) throw DimensionError("classification_loss: label count");
  if (labels.empty()) return Tensor::scalar(0.0);
  const Tensor pc = clamp(reshape(p, {labels.size()}), eps, 1.0 - eps);
  const Tensor l({labels.size()}, labels);
  const Tensor one_minus_l = add_scalar(scale(l, -1.0), 1.0);
  const Tensor ll = add(mul(l, log(pc)), mul(one_minus_l, log(add_scalar(scale(pc, -1.0), 1.0))));
  return scale(sum(ll), -1.0 / static_cast<Real>(labels.size()));
}

/// Σ over masked rows and all terms of smooth-L1(pred − target), divided by the
/// number of masked rows; 0 when no row is masked.
inline Tensor regression_loss(const Tensor& pred, const Tensor& target, const std::vector<bool>& mask) {
  detail::require_same_shape(pred, target, "regression_loss");
  if (pred.rank() != 2 || mask.size() != pred.dim(0)) throw DimensionError("regression_loss: expects [N×R] and N mask bits");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) rows.push_back(i);
  if (rows.empty()) return Tensor::scalar(0.0);
  const Tensor diff = sub(gather_rows(pred, rows), gather_rows(target, rows));
  return scale(sum(smooth_l1(diff)), 1.0 / static_cast<Real>(rows.size()));
}

struct LossConfig {
  AssignmentConfig assignment;
  Real alpha = 1.0;
  Real clamp_eps = 1e-7;
  BoxVariant variant = BoxVariant::Bev;
  EncodingOptions encoding;
  bool operator==(const LossConfig&) const = default;
};

struct LossBreakdown {
  Tensor total;  // differentiable scalar
  Real value = 0, cls = 0, reg = 0, alpha = 1;
  std::vector<Real> reg_terms;  // per regression term, averaged over positives
  std::size_t n = 0, n_pos = 0;
};

/// Multi-task loss on header output [ly×lx×A×(1+R)] for one scene.
inline LossBreakdown detection_loss(const Tensor& head, const std::vector<Anchor>& anchors,
                                    const std::vector<DetectionBox>& gts, const LossConfig& cfg,
                                    std::uint64_t seed) {
  const std::size_t r = regression_terms(cfg.variant);
  if (head.rank() != 4 || head.dim(3) != 1 + r || head.numel() != anchors.size() * (1 + r))
    throw DimensionError("detection_loss: header output " + to_string(head.shape()) + " vs " +
                         std::to_string(anchors.size()) + " anchors with " + std::to_string(r) + " terms");
  const std::size_t m = anchors.size();
  const Tensor columns = transpose(reshape(head, {m, 1 + r}));  // [(1+R)×M]
  const Tensor logits = reshape(gather_rows(columns, {0}), {m});
  std::vector<std::size_t> reg_cols(r);
  std::iota(reg_cols.begin(), reg_cols.end(), 1);
  const Tensor reg_rows = transpose(gather_rows(columns, reg_cols));  // [M×R]

  const auto labels = assign_anchors(anchors, gts, cfg.assignment);
  std::vector<std::size_t> positives, negatives;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i].role == AnchorRole::Positive) positives.push_back(i);
    if (labels[i].role == AnchorRole::Negative) negatives.push_back(i);
  }
  std::vector<Real> scores(m);
  for (std::size_t i = 0; i < m; ++i) scores[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  const auto mined = hard_negative_mining(negatives, scores, cfg.assignment.neg_sample_fraction,
                                          cfg.assignment.topk(positives.size()), seed);

  std::vector<std::size_t> selected = positives;
  selected.insert(selected.end(), mined.begin(), mined.end());
  std::vector<Real> targets_cls(positives.size(), 1.0);
  targets_cls.resize(selected.size(), 0.0);
  const Tensor cls = selected.empty() ? Tensor::scalar(0.0)
                                      : classification_loss(sigmoid(gather_rows(reshape(logits, {m, 1}), selected)),
                                                            targets_cls, cfg.clamp_eps);

  Tensor reg = Tensor::scalar(0.0);
  std::vector<Real> per_term(r, 0.0);
  if (!positives.empty()) {
    std::vector<Real> target;
    target.reserve(positives.size() * r);
    for (std::size_t i : positives) {
      const auto p = encode_targets(gts[labels[i].gt], anchors[i], cfg.variant, cfg.encoding);
      target.insert(target.end(), p.begin(), p.end());
    }
    const Tensor pred = gather_rows(reg_rows, positives);
    const Tensor tgt({positives.size(), r}, std::move(target));
    reg = regression_loss(pred, tgt, std::vector<bool>(positives.size(), true));
    for (std::size_t row = 0; row < positives.size(); ++row)
      for (std::size_t k = 0; k < r; ++k) {
        const Real x = std::abs(pred[row * r + k] - tgt[row * r + k]);
        per_term[k] += (x < 1.0 ? 0.5 * x * x : x - 0.5) / static_cast<Real>(positives.size());
      }
  }

  LossBreakdown out;
  out.total = add(cls, scale(reg, cfg.alpha));
  out.cls = cls.item();
  out.reg = reg.item();
  out.alpha = cfg.alpha;
  out.value = out.total.item();
  out.reg_terms = std::move(per_term);
  out.n = selected.size();
  out.n_pos = positives.size();
  return out;
}

}  // namespace contfuse
