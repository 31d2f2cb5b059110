#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "contfuse/iou.hpp"

namespace contfuse {

struct NmsOptions {
  Real iou_threshold = 0.1;
  Real score_threshold = 0.1;
  std::size_t max_out = std::numeric_limits<std::size_t>::max();
  bool operator==(const NmsOptions&) const = default;
};

/// Indices of `boxes` ordered by descending score, ties by ascending index.
inline std::vector<std::size_t> score_order(const std::vector<DetectionBox>& boxes) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
  return order;
}

/// Greedy per-class suppression by rotated BEV IoU. A box survives iff its IoU with
/// every already kept box of its class is below the threshold.
inline std::vector<DetectionBox> nms(const std::vector<DetectionBox>& boxes, const NmsOptions& opts = {}) {
  std::vector<DetectionBox> kept;
  for (std::size_t i : score_order(boxes)) {
    if (kept.size() >= opts.max_out) break;
    const DetectionBox& b = boxes[i];
    if (b.score < opts.score_threshold) continue;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const DetectionBox& k) {
      return k.class_id == b.class_id && rotated_iou_bev(k, b) >= opts.iou_threshold;
    });
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

}  // namespace contfuse
