#pragma once

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include "contfuse/iou.hpp"
#include "contfuse/nms.hpp"

namespace contfuse {

enum class IouKind { Bev, Full3d };

struct RangeBin {
  Real x_min = 0, x_max = 10;
  bool contains(Real x) const { return x >= x_min && x < x_max; }
  bool operator==(const RangeBin&) const = default;
};

struct EvalConfig {
  IouKind iou_kind = IouKind::Bev;
  Real iou_threshold = 0.5;
  std::size_t ap_points = 11;
  std::vector<RangeBin> range_bins;

  void validate() const {
    if (!(iou_threshold > 0 && iou_threshold < 1)) throw ConfigError("iou_threshold must lie in (0, 1)");
    if (ap_points < 2) throw ConfigError("ap_points must be >= 2");
    for (std::size_t i = 0; i < range_bins.size(); ++i) {
      if (!(range_bins[i].x_max > range_bins[i].x_min)) throw ConfigError("range bin with empty extent");
      for (std::size_t j = 0; j < i; ++j)
        if (range_bins[i].x_min < range_bins[j].x_max && range_bins[j].x_min < range_bins[i].x_max)
          throw ConfigError("range bins overlap");
    }
  }
  bool operator==(const EvalConfig&) const = default;
};

inline Real box_iou(const DetectionBox& a, const DetectionBox& b, IouKind kind) {
  return kind == IouKind::Bev ? rotated_iou_bev(a, b) : iou_3d(a, b);
}

enum class MatchFlag { TruePositive, FalsePositive, Ignored };

/// Greedy matching of score-sorted detections: each takes the unmatched
/// non-ignored ground truth of highest IoU ≥ threshold. A detection that finds
/// none but overlaps an ignored box that much is neither TP nor FP.
inline std::vector<MatchFlag> match_detections(const std::vector<DetectionBox>& dets,
                                               const std::vector<DetectionBox>& gts, const EvalConfig& cfg) {
  std::vector<bool> used(gts.size(), false);
  std::vector<MatchFlag> flags;
  flags.reserve(dets.size());
  for (const DetectionBox& d : dets) {
    Real best = -1.0;
    std::size_t best_gt = gts.size();
    bool hits_ignored = false;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const Real iou = box_iou(d, gts[g], cfg.iou_kind);
      if (iou < cfg.iou_threshold) continue;
      if (gts[g].ignore) {
        hits_ignored = true;
      } else if (!used[g] && gts[g].class_id == d.class_id && iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    if (best_gt < gts.size()) {
      used[best_gt] = true;
      flags.push_back(MatchFlag::TruePositive);
    } else {
      flags.push_back(hits_ignored ? MatchFlag::Ignored : MatchFlag::FalsePositive);
    }
  }
  return flags;
}

struct PrCurve {
  std::vector<Real> recall;        // after each counted detection, non-decreasing
  std::vector<Real> precision;
  std::vector<Real> sample_recall;         // {0, 1/(P−1), …, 1}
  std::vector<Real> interpolated_precision;  // at sample_recall, non-increasing
  std::optional<Real> ap;          // absent when there is no ground truth
};

/// Interpolated AP from flags in rank order: precision at recall level r is the
/// best precision at any recall ≥ r (0 if unreached), averaged over P levels
/// {0, 1/(P−1), …, 1}.
inline PrCurve precision_recall(const std::vector<MatchFlag>& flags, std::size_t num_gt, std::size_t ap_points) {
  PrCurve c;
  if (num_gt == 0) return c;
  std::size_t tp = 0, fp = 0;
  for (MatchFlag f : flags) {
    if (f == MatchFlag::Ignored) continue;
    (f == MatchFlag::TruePositive ? tp : fp) += 1;
    c.recall.push_back(static_cast<Real>(tp) / static_cast<Real>(num_gt));
    c.precision.push_back(static_cast<Real>(tp) / static_cast<Real>(tp + fp));
  }
  Real total = 0;
  for (std::size_t i = 0; i < ap_points; ++i) {
    const Real r = static_cast<Real>(i) / static_cast<Real>(ap_points - 1);
    Real best = 0;
    for (std::size_t j = 0; j < c.recall.size(); ++j)
      if (c.recall[j] >= r - 1e-12) best = std::max(best, c.precision[j]);
    c.sample_recall.push_back(r);
    c.interpolated_precision.push_back(best);
    total += best;
  }
  c.ap = total / static_cast<Real>(ap_points);
  return c;
}

inline std::optional<Real> average_precision(const std::vector<MatchFlag>& flags, std::size_t num_gt,
                                             std::size_t ap_points) {
  return precision_recall(flags, num_gt, ap_points).ap;
}

/// Detections and ground truth of one frame.
struct FrameResult {
  std::vector<DetectionBox> detections;
  std::vector<DetectionBox> ground_truth;
};

/// Matches each frame independently, then ranks all detections of `class_id`
/// globally by score (ties by frame order, then detection order).
inline PrCurve evaluate_class(const std::vector<FrameResult>& frames, int class_id, const EvalConfig& cfg) {
  cfg.validate();
  struct Ranked {
    Real score;
    MatchFlag flag;
  };
  std::vector<Ranked> ranked;
  std::size_t num_gt = 0;
  for (const FrameResult& f : frames) {
    std::vector<DetectionBox> dets;
    for (const DetectionBox& d : f.detections)
      if (d.class_id == class_id) dets.push_back(d);
    std::vector<DetectionBox> sorted;
    for (std::size_t i : score_order(dets)) sorted.push_back(dets[i]);
    for (const DetectionBox& g : f.ground_truth)
      if (!g.ignore && g.class_id == class_id) ++num_gt;
    const auto flags = match_detections(sorted, f.ground_truth, cfg);
    for (std::size_t i = 0; i < sorted.size(); ++i) ranked.push_back({sorted[i].score, flags[i]});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
  std::vector<MatchFlag> flags;
  for (const Ranked& r : ranked) flags.push_back(r.flag);
  return precision_recall(flags, num_gt, cfg.ap_points);
}

/// AP per forward-distance bin; boxes are bucketed by center x and only match
/// within their own bin.
inline std::vector<std::pair<RangeBin, std::optional<Real>>> piecewise_range_ap(
    const std::vector<FrameResult>& frames, int class_id, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<RangeBin, std::optional<Real>>> out;
  for (const RangeBin& bin : cfg.range_bins) {
    std::vector<FrameResult> bucket;
    for (const FrameResult& f : frames) {
      FrameResult b;
      for (const DetectionBox& d : f.detections)
        if (bin.contains(d.x)) b.detections.push_back(d);
      for (const DetectionBox& g : f.ground_truth)
        if (bin.contains(g.x)) b.ground_truth.push_back(g);
      bucket.push_back(std::move(b));
    }
    out.emplace_back(bin, evaluate_class(bucket, class_id, cfg).ap);
  }
  return out;
}

}  // namespace contfuse
