#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "contfuse/ops.hpp"
#include "contfuse/tensor.hpp"

namespace contfuse {

struct Point3 {
  Real x = 0.0, y = 0.0, z = 0.0;
};

/// LIDAR returns in the sensor frame (x forward, y left, z up), meters.
/// A point's index is its identity; nothing reorders the array.
struct PointCloud {
  std::vector<Point3> points;
  std::vector<Real> intensity;  // empty, or one value per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

using Mat3x4 = std::array<Real, 12>;
using Mat3 = std::array<Real, 9>;

/// Projective map from homogeneous LIDAR coordinates to homogeneous pixels.
struct CalibratedCamera {
  Mat3x4 projection{};
  std::size_t height = 0;
  std::size_t width = 0;
};

struct Projection {
  Real u = 0.0;
  Real v = 0.0;
  Real depth = 0.0;
  bool valid = false;
};

/// Sub-pixel image coordinates of every point. Points with non-positive depth or
/// landing outside [0, W−1]×[0, H−1] are flagged invalid.
inline Projection project_point(const Point3& p, const CalibratedCamera& cam) {
  const auto& m = cam.projection;
  const Real a = m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3];
  const Real b = m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7];
  const Real w = m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11];
  Projection out;
  out.depth = w;
  if (!(w > 0.0)) return out;
  out.u = a / w;
  out.v = b / w;
  out.valid = out.u >= 0.0 && out.v >= 0.0 && out.u <= static_cast<Real>(cam.width) - 1.0 &&
              out.v <= static_cast<Real>(cam.height) - 1.0;
  return out;
}

inline std::vector<Projection> project_points(const PointCloud& cloud, const CalibratedCamera& cam) {
  std::vector<Projection> out;
  out.reserve(cloud.size());
  for (const Point3& p : cloud.points) out.push_back(project_point(p, cam));
  return out;
}

struct Interval {
  Real min = 0.0;
  Real max = 0.0;
  Real length() const { return max - min; }
  bool contains(Real v) const { return v >= min && v < max; }
  bool operator==(const Interval&) const = default;
};

/// Metric box discretized into nx × ny × nz voxels. Voxel i on an axis has its
/// center at min + (i + 0.5)·cell; voxel centers form the interpolation lattice.
class BevGrid {
 public:
  BevGrid() = default;
  BevGrid(Interval x, Interval y, Interval z, std::size_t nx, std::size_t ny, std::size_t nz)
      : x_(x), y_(y), z_(z), nx_(nx), ny_(ny), nz_(nz) {
    if (!(x.length() > 0.0) || !(y.length() > 0.0) || !(z.length() > 0.0))
      throw std::invalid_argument("BevGrid: degenerate range");
    if (nx == 0 || ny == 0 || nz == 0) throw std::invalid_argument("BevGrid: zero resolution");
  }

  const Interval& x_range() const { return x_; }
  const Interval& y_range() const { return y_; }
  const Interval& z_range() const { return z_; }
  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  std::size_t nz() const { return nz_; }

  Real cell_x() const { return x_.length() / static_cast<Real>(nx_); }
  Real cell_y() const { return y_.length() / static_cast<Real>(ny_); }
  Real cell_z() const { return z_.length() / static_cast<Real>(nz_); }

  /// Fractional lattice coordinates (integer at voxel centers).
  Real frac_x(Real x) const { return (x - x_.min) / cell_x() - 0.5; }
  Real frac_y(Real y) const { return (y - y_.min) / cell_y() - 0.5; }
  Real frac_z(Real z) const { return (z - z_.min) / cell_z() - 0.5; }

  Real center_x(Real col) const { return x_.min + (col + 0.5) * cell_x(); }
  Real center_y(Real row) const { return y_.min + (row + 0.5) * cell_y(); }
  Real center_z(Real layer) const { return z_.min + (layer + 0.5) * cell_z(); }

  bool contains(const Point3& p) const {
    return x_.contains(p.x) && y_.contains(p.y) && z_.contains(p.z);
  }

  /// Column/row of the BEV cell holding (x, y), or false when outside.
  bool cell_of(Real x, Real y, std::size_t& col, std::size_t& row) const {
    if (!x_.contains(x) || !y_.contains(y)) return false;
    col = std::min(nx_ - 1, static_cast<std::size_t>((x - x_.min) / cell_x()));
    row = std::min(ny_ - 1, static_cast<std::size_t>((y - y_.min) / cell_y()));
    return true;
  }

  /// Same metric extent with the BEV resolution divided by `stride`.
  BevGrid coarsen(std::size_t stride) const {
    if (stride == 0 || nx_ % stride != 0 || ny_ % stride != 0)
      throw DimensionError("BevGrid::coarsen: resolution " + std::to_string(nx_) + "x" +
                           std::to_string(ny_) + " not divisible by " + std::to_string(stride));
    return BevGrid(x_, y_, z_, nx_ / stride, ny_ / stride, nz_);
  }

  bool operator==(const BevGrid& o) const {
    return x_.min == o.x_.min && x_.max == o.x_.max && y_.min == o.y_.min && y_.max == o.y_.max &&
           z_.min == o.z_.min && z_.max == o.z_.max && nx_ == o.nx_ && ny_ == o.ny_ && nz_ == o.nz_;
  }

 private:
  Interval x_{}, y_{}, z_{};
  std::size_t nx_ = 0, ny_ = 0, nz_ = 0;
};

/// Trilinear mass splatting: each in-range point spreads unit mass over the 8
/// lattice nodes around it. Mass falling off the lattice is dropped.
inline Tensor voxelize(const PointCloud& cloud, const BevGrid& grid) {
  const std::size_t nx = grid.nx(), ny = grid.ny(), nz = grid.nz();
  Tensor out({nz, ny, nx}, 0.0);
  auto data = out.data();
  for (const Point3& p : cloud.points) {
    if (!grid.contains(p)) continue;
    const Real gx = grid.frac_x(p.x), gy = grid.frac_y(p.y), gz = grid.frac_z(p.z);
    const Real fx0 = std::floor(gx), fy0 = std::floor(gy), fz0 = std::floor(gz);
    const long long ix = static_cast<long long>(fx0), iy = static_cast<long long>(fy0),
                    iz = static_cast<long long>(fz0);
    const std::array<Real, 2> wx{1.0 - (gx - fx0), gx - fx0};
    const std::array<Real, 2> wy{1.0 - (gy - fy0), gy - fy0};
    const std::array<Real, 2> wz{1.0 - (gz - fz0), gz - fz0};
    for (int dz = 0; dz < 2; ++dz) {
      const long long z = iz + dz;
      if (z < 0 || z >= static_cast<long long>(nz) || wz[dz] == 0.0) continue;
      for (int dy = 0; dy < 2; ++dy) {
        const long long y = iy + dy;
        if (y < 0 || y >= static_cast<long long>(ny) || wy[dy] == 0.0) continue;
        for (int dx = 0; dx < 2; ++dx) {
          const long long x = ix + dx;
          if (x < 0 || x >= static_cast<long long>(nx) || wx[dx] == 0.0) continue;
          data[(static_cast<std::size_t>(z) * ny + static_cast<std::size_t>(y)) * nx +
               static_cast<std::size_t>(x)] += wz[dz] * wy[dy] * wx[dx];
        }
      }
    }
  }
  return out;
}

struct PixelCoord {
  Real u = 0.0;
  Real v = 0.0;
  bool valid = true;
};

namespace detail {

struct BilinearTap {
  std::array<std::size_t, 4> offset{};  // y·W + x of the four neighbours
  std::array<Real, 4> weight{};
  bool active = false;
};

inline BilinearTap bilinear_tap(Real u, Real v, std::size_t h, std::size_t w) {
  BilinearTap tap;
  if (!(u >= 0.0 && v >= 0.0 && u <= static_cast<Real>(w) - 1.0 && v <= static_cast<Real>(h) - 1.0))
    return tap;
  const std::size_t x0 = static_cast<std::size_t>(std::floor(u));
  const std::size_t y0 = static_cast<std::size_t>(std::floor(v));
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const Real ax = u - static_cast<Real>(x0);
  const Real ay = v - static_cast<Real>(y0);
  tap.offset = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
  tap.weight = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  tap.active = true;
  return tap;
}

}  // namespace detail

/// Bilinear samples of feature_map [C×H×W] at each coordinate → [M×C]. Invalid
/// or out-of-bounds coordinates yield zero rows. Differentiable w.r.t. the map.
inline Tensor bilinear_gather(const Tensor& feature_map, const std::vector<PixelCoord>& coords) {
  if (feature_map.rank() != 3) throw DimensionError("bilinear_gather expects [C,H,W]");
  const std::size_t c = feature_map.dim(0), h = feature_map.dim(1), w = feature_map.dim(2);
  const std::size_t plane = h * w;
  std::vector<detail::BilinearTap> taps;
  taps.reserve(coords.size());
  for (const PixelCoord& pc : coords)
    taps.push_back(pc.valid ? detail::bilinear_tap(pc.u, pc.v, h, w) : detail::BilinearTap{});
  std::vector<Real> out(coords.size() * c, 0.0);
  const Real* src = feature_map.data().data();
  for (std::size_t m = 0; m < taps.size(); ++m) {
    const auto& tap = taps[m];
    if (!tap.active) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Real* p = src + ch * plane;
      out[m * c + ch] = tap.weight[0] * p[tap.offset[0]] + tap.weight[1] * p[tap.offset[1]] +
                        tap.weight[2] * p[tap.offset[2]] + tap.weight[3] * p[tap.offset[3]];
    }
  }
  return detail::make_result({coords.size(), c}, std::move(out), "bilinear_gather", {&feature_map},
                             [taps = std::move(taps), c, plane](detail::Node& n) {
                               Real* g = detail::parent_grad(n, 0);
                               if (!g) return;
                               for (std::size_t m = 0; m < taps.size(); ++m) {
                                 const auto& tap = taps[m];
                                 if (!tap.active) continue;
                                 for (std::size_t ch = 0; ch < c; ++ch) {
                                   const Real go = n.grad[m * c + ch];
                                   for (int k = 0; k < 4; ++k)
                                     g[ch * plane + tap.offset[k]] += tap.weight[k] * go;
                                 }
                               }
                             });
}

/// Feature vector [C] at continuous pixel (u, v); zero outside [0, W−1]×[0, H−1].
inline Tensor bilinear_sample(const Tensor& feature_map, Real u, Real v) {
  const Tensor rows = bilinear_gather(feature_map, {PixelCoord{u, v, true}});
  return reshape(rows, {feature_map.dim(0)});
}

}  // namespace contfuse
