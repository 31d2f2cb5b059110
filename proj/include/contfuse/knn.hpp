#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numeric>
#include <vector>

#include "contfuse/geometry.hpp"

namespace contfuse {

struct Neighbor {
  std::size_t index = 0;
  Real dist2 = 0.0;  // squared BEV distance

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
  friend bool operator==(const Neighbor& a, const Neighbor& b) {
    return a.index == b.index && a.dist2 == b.dist2;
  }
};

inline Real bev_dist2(Real qx, Real qy, const Point3& p) {
  const Real dx = p.x - qx;
  const Real dy = p.y - qy;
  return dx * dx + dy * dy;
}

/// Reference K-nearest search on the (x, y) plane by linear scan. Results are
/// ordered by (distance, index) and limited to distance ≤ max_dist.
inline std::vector<Neighbor> knn_bev_brute(Real qx, Real qy, const PointCloud& cloud, std::size_t k,
                                           Real max_dist) {
  std::vector<Neighbor> all;
  const Real cap2 = max_dist * max_dist;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Real d2 = bev_dist2(qx, qy, cloud.points[i]);
    if (d2 <= cap2) all.push_back({i, d2});
  }
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end());
  all.resize(keep);
  return all;
}

/// Immutable 2D k-d tree over the BEV projection of a point cloud. Queries are
/// const and may run concurrently.
class BevIndex {
 public:
  BevIndex() = default;

  explicit BevIndex(const PointCloud& cloud) {
    xy_.reserve(cloud.size());
    for (const Point3& p : cloud.points) xy_.push_back({p.x, p.y});
    order_.resize(cloud.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(cloud.size());
    if (!order_.empty()) root_ = build(0, order_.size(), 0);
  }

  std::size_t size() const { return xy_.size(); }

  std::vector<Neighbor> knn(Real qx, Real qy, std::size_t k, Real max_dist) const {
    std::vector<Neighbor> heap;  // max-heap on (dist2, index)
    if (k == 0 || root_ < 0) return heap;
    heap.reserve(k + 1);
    Query q{qx, qy, k, max_dist * max_dist};
    search(root_, q, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

 private:
  struct XY {
    Real x, y;
  };
  struct KdNode {
    std::size_t point;
    int axis;
    int left = -1, right = -1;
  };
  struct Query {
    Real x, y;
    std::size_t k;
    Real cap2;
  };

  int build(std::size_t begin, std::size_t end, int depth) {
    if (begin >= end) return -1;
    const int axis = depth % 2;
    const std::size_t mid = begin + (end - begin) / 2;
    auto key = [&](std::size_t i) { return axis == 0 ? xy_[i].x : xy_[i].y; };
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                       return key(a) < key(b) || (key(a) == key(b) && a < b);
                     });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({order_[mid], axis});
    const int l = build(begin, mid, depth + 1);
    const int r = build(mid + 1, end, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  void offer(const Query& q, Neighbor cand, std::vector<Neighbor>& heap) const {
    if (cand.dist2 > q.cap2) return;
    if (heap.size() < q.k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end());
    } else if (cand < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(int id, const Query& q, std::vector<Neighbor>& heap) const {
    const KdNode& n = nodes_[static_cast<std::size_t>(id)];
    const XY& p = xy_[n.point];
    const Real dx = p.x - q.x, dy = p.y - q.y;
    offer(q, {n.point, dx * dx + dy * dy}, heap);
    const Real split = n.axis == 0 ? p.x : p.y;
    const Real qv = n.axis == 0 ? q.x : q.y;
    const int near = qv < split ? n.left : n.right;
    const int far = qv < split ? n.right : n.left;
    if (near >= 0) search(near, q, heap);
    if (far < 0) return;
    const Real plane2 = (qv - split) * (qv - split);
    // Keep equal-distance subtrees: they may hold a lower index that wins the tie.
    if (plane2 > q.cap2) return;
    if (heap.size() == q.k && plane2 > heap.front().dist2) return;
    search(far, q, heap);
  }

  std::vector<XY> xy_;
  std::vector<std::size_t> order_;
  std::vector<KdNode> nodes_;
  int root_ = -1;
};

inline BevIndex build_bev_index(const PointCloud& cloud) { return BevIndex(cloud); }

inline std::vector<Neighbor> knn_bev(Real qx, Real qy, const BevIndex& index, std::size_t k,
                                     Real max_dist) {
  return index.knn(qx, qy, k, max_dist);
}

}  // namespace contfuse
