#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "contfuse/box.hpp"

namespace contfuse {

struct Vec2 {
  Real x = 0, y = 0;
};

using Polygon = std::vector<Vec2>;

/// Footprint corners in counter-clockwise order.
inline std::array<Vec2, 4> bev_corners(const DetectionBox& b) {
  const Real c = std::cos(b.t), s = std::sin(b.t);
  const Real hw = b.w / 2, hh = b.h / 2;
  const Real lx[4] = {hw, -hw, -hw, hw}, ly[4] = {hh, hh, -hh, -hh};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = {b.x + c * lx[i] - s * ly[i], b.y + s * lx[i] + c * ly[i]};
  return out;
}

inline Real polygon_area(const Polygon& p) {
  Real a = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % p.size()];
    a += u.x * v.y - v.x * u.y;
  }
  return std::abs(a) / 2;
}

/// Sutherland–Hodgman clip of `subject` by the convex CCW polygon `clip`.
inline Polygon clip_convex(Polygon subject, const Polygon& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2 a = clip[e], b = clip[(e + 1) % clip.size()];
    auto side = [&](const Vec2& p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
    Polygon out;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2 cur = subject[i], nxt = subject[(i + 1) % subject.size()];
      const Real sc = side(cur), sn = side(nxt);
      if (sc >= 0) out.push_back(cur);
      if ((sc >= 0) != (sn >= 0)) {
        const Real f = sc / (sc - sn);
        out.push_back({cur.x + f * (nxt.x - cur.x), cur.y + f * (nxt.y - cur.y)});
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline Real bev_intersection_area(const DetectionBox& a, const DetectionBox& b) {
  const auto ca = bev_corners(a), cb = bev_corners(b);
  return polygon_area(clip_convex(Polygon(ca.begin(), ca.end()), Polygon(cb.begin(), cb.end())));
}

/// Oriented-rectangle IoU on the ground plane; 0 for a zero-area box.
inline Real rotated_iou_bev(const DetectionBox& a, const DetectionBox& b) {
  const Real area_a = a.w * a.h, area_b = b.w * b.h;
  if (!(area_a > 0) || !(area_b > 0)) return 0.0;
  const Real inter = bev_intersection_area(a, b);
  const Real uni = area_a + area_b - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

/// Volume IoU of cuboids that rotate about the vertical axis only.
inline Real iou_3d(const DetectionBox& a, const DetectionBox& b) {
  const Real vol_a = a.w * a.h * a.d, vol_b = b.w * b.h * b.d;
  if (!(vol_a > 0) || !(vol_b > 0)) return 0.0;
  const Real overlap = std::min(a.z + a.d / 2, b.z + b.d / 2) - std::max(a.z - a.d / 2, b.z - b.d / 2);
  if (overlap <= 0) return 0.0;
  const Real inter = bev_intersection_area(a, b) * overlap;
  const Real uni = vol_a + vol_b - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

}  // namespace contfuse
