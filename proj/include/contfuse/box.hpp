#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "contfuse/geometry.hpp"

namespace contfuse {

/// Which regression terms a box carries: BEV drops z and d, the KITTI variant
/// appends the 2D image-box height.
enum class BoxVariant { Bev, Full3d, Kitti3d };

inline std::size_t regression_terms(BoxVariant v) {
  switch (v) {
    case BoxVariant::Bev: return 5;
    case BoxVariant::Full3d: return 7;
    case BoxVariant::Kitti3d: return 8;
  }
  return 7;
}

/// Oriented box in the LIDAR frame. w and h span the BEV footprint (along and
/// across the heading t), d is the vertical extent; z is the box center height.
struct DetectionBox {
  int class_id = 0;
  Real score = 1.0;
  Real x = 0, y = 0, z = 0;
  Real w = 1, h = 1, d = 1;
  Real t = 0;
  bool ignore = false;       // excluded from matching and from false positives
  Real image_height = 0.0;   // 2D box height in pixels, Kitti3d only
  BoxVariant variant = BoxVariant::Full3d;
};

struct Anchor {
  int class_id = 0;
  Real x = 0, y = 0, z = 0;
  Real w = 1, h = 1, d = 1;
  Real t = 0;
  Real image_height = 1.0;
};

/// Fixed per-class anchor dimensions.
struct AnchorShape {
  Real w = 3.9, h = 1.6, d = 1.56;
  Real z = 0.78;  // center height above the ground plane
  Real image_height = 40.0;

  Real bev_diagonal() const { return std::hypot(w, h); }
  bool operator==(const AnchorShape&) const = default;
};

class EncodingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CenterNormalizer { AnchorCoordinate, AnchorDiagonal };

struct EncodingOptions {
  /// AnchorCoordinate divides the center offset by the anchor coordinate itself;
  /// AnchorDiagonal divides x/y by the BEV diagonal and z by the anchor height.
  CenterNormalizer center = CenterNormalizer::AnchorCoordinate;
  Real epsilon = 1e-6;            // smallest |anchor coordinate| accepted as a divisor
  bool wrap_orientation = false;  // wrap the orientation offset into (−π/2, π/2]
  bool operator==(const EncodingOptions&) const = default;
};

inline Real wrap_half_pi(Real a) {
  constexpr Real pi = std::numbers::pi;
  Real r = std::fmod(a + pi / 2, pi);
  if (r <= 0) r += pi;
  return r - pi / 2;
}

namespace detail {

inline Real center_scale(Real coord, Real diag_scale, const char* axis, const EncodingOptions& o) {
  if (o.center == CenterNormalizer::AnchorDiagonal) return diag_scale;
  if (std::abs(coord) < o.epsilon)
    throw EncodingError(std::string("anchor ") + axis + " coordinate " + std::to_string(coord) +
                        " is too close to zero to normalise by");
  return coord;
}

}  // namespace detail

/// Regression targets of `gt` relative to `anchor`, ordered x, y, [z], w, h, [d], t, [image height].
inline std::vector<Real> encode_targets(const DetectionBox& gt, const Anchor& a, BoxVariant v,
                                        const EncodingOptions& o = {}) {
  if (a.w <= 0 || a.h <= 0 || a.d <= 0) throw EncodingError("anchor sizes must be positive");
  if (gt.w <= 0 || gt.h <= 0 || (v != BoxVariant::Bev && gt.d <= 0)) throw EncodingError("box sizes must be positive");
  const bool full = v != BoxVariant::Bev;
  const Real diag = std::hypot(a.w, a.h);
  std::vector<Real> p;
  p.reserve(regression_terms(v));
  p.push_back((gt.x - a.x) / detail::center_scale(a.x, diag, "x", o));
  p.push_back((gt.y - a.y) / detail::center_scale(a.y, diag, "y", o));
  if (full) p.push_back((gt.z - a.z) / detail::center_scale(a.z, a.d, "z", o));
  p.push_back(std::log(gt.w / a.w));
  p.push_back(std::log(gt.h / a.h));
  if (full) p.push_back(std::log(gt.d / a.d));
  const Real dt = gt.t - a.t;
  p.push_back(o.wrap_orientation ? wrap_half_pi(dt) : dt);
  if (v == BoxVariant::Kitti3d) {
    if (gt.image_height <= 0 || a.image_height <= 0) throw EncodingError("image heights must be positive");
    p.push_back(std::log(gt.image_height / a.image_height));
  }
  return p;
}

/// Inverse of encode_targets. Terms absent from the variant are taken from the anchor.
inline DetectionBox decode_targets(const std::vector<Real>& p, const Anchor& a, BoxVariant v,
                                   const EncodingOptions& o = {}) {
  if (p.size() != regression_terms(v))
    throw DimensionError("decode_targets: " + std::to_string(p.size()) + " offsets, expected " +
                         std::to_string(regression_terms(v)));
  const bool full = v != BoxVariant::Bev;
  const Real diag = std::hypot(a.w, a.h);
  const bool by_diag = o.center == CenterNormalizer::AnchorDiagonal;
  DetectionBox b;
  b.class_id = a.class_id;
  b.variant = v;
  std::size_t i = 0;
  b.x = a.x + p[i++] * (by_diag ? diag : a.x);
  b.y = a.y + p[i++] * (by_diag ? diag : a.y);
  b.z = full ? a.z + p[i++] * (by_diag ? a.d : a.z) : a.z;
  b.w = a.w * std::exp(p[i++]);
  b.h = a.h * std::exp(p[i++]);
  b.d = full ? a.d * std::exp(p[i++]) : a.d;
  b.t = a.t + p[i++];
  if (v == BoxVariant::Kitti3d) b.image_height = a.image_height * std::exp(p[i++]);
  return b;
}

/// Anchors for every output location of `grid`, ordered (row, col, class, orientation).
inline std::vector<Anchor> make_anchors(const BevGrid& grid, const std::vector<AnchorShape>& shapes,
                                        const std::vector<Real>& orientations = {0.0, std::numbers::pi / 2}) {
  std::vector<Anchor> out;
  out.reserve(grid.nx() * grid.ny() * shapes.size() * orientations.size());
  for (std::size_t row = 0; row < grid.ny(); ++row)
    for (std::size_t col = 0; col < grid.nx(); ++col)
      for (std::size_t c = 0; c < shapes.size(); ++c)
        for (Real t : orientations) {
          const AnchorShape& s = shapes[c];
          out.push_back({static_cast<int>(c), grid.center_x(static_cast<Real>(col)), grid.center_y(static_cast<Real>(row)),
                         s.z, s.w, s.h, s.d, t, s.image_height});
        }
  return out;
}

}  // namespace contfuse
