#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "contfuse/scene.hpp"

namespace contfuse {

struct AugmentationConfig {
  Real scale_min = 0.9, scale_max = 1.1;  // drawn independently per axis
  Real translate_xy = 5.0;                // meters, ±
  Real translate_z = 1.0;
  Real rotate_deg = 5.0;                  // about z, ±
  Real image_scale_min = 0.9, image_scale_max = 1.1;
  Real image_translate_px = 50.0;

  static AugmentationConfig identity() { return {1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0}; }

  void validate() const {
    if (!(scale_min > 0 && scale_max >= scale_min)) throw ConfigError("augment: bad scale range");
    if (!(image_scale_min > 0 && image_scale_max >= image_scale_min)) throw ConfigError("augment: bad image scale range");
    if (translate_xy < 0 || translate_z < 0 || rotate_deg < 0 || image_translate_px < 0)
      throw ConfigError("augment: ranges must be non-negative");
  }
  bool operator==(const AugmentationConfig&) const = default;
};

struct AugmentationParams {
  Real sx = 1, sy = 1, sz = 1;
  Real tx = 0, ty = 0, tz = 0;
  Real yaw = 0;  // radians
  Real image_scale = 1;
  Real du = 0, dv = 0;  // pixels
};

inline AugmentationParams sample_augmentation(const AugmentationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](Real lo, Real hi) { return lo == hi ? lo : std::uniform_real_distribution<Real>(lo, hi)(rng); };
  AugmentationParams p;
  p.sx = uniform(cfg.scale_min, cfg.scale_max);
  p.sy = uniform(cfg.scale_min, cfg.scale_max);
  p.sz = uniform(cfg.scale_min, cfg.scale_max);
  p.tx = uniform(-cfg.translate_xy, cfg.translate_xy);
  p.ty = uniform(-cfg.translate_xy, cfg.translate_xy);
  p.tz = uniform(-cfg.translate_z, cfg.translate_z);
  p.yaw = uniform(-cfg.rotate_deg, cfg.rotate_deg) * std::numbers::pi / 180.0;
  p.image_scale = uniform(cfg.image_scale_min, cfg.image_scale_max);
  p.du = uniform(-cfg.image_translate_px, cfg.image_translate_px);
  p.dv = uniform(-cfg.image_translate_px, cfg.image_translate_px);
  return p;
}

using Mat4 = std::array<Real, 16>;

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) c[i * 4 + j] += a[i * 4 + k] * b[k * 4 + j];
  return c;
}

/// Inverse of p ↦ R(yaw)·diag(s)·p + t.
inline Mat4 inverse_lidar_transform(const AugmentationParams& p) {
  const Real c = std::cos(p.yaw), s = std::sin(p.yaw);
  const Mat4 untranslate{1, 0, 0, -p.tx, 0, 1, 0, -p.ty, 0, 0, 1, -p.tz, 0, 0, 0, 1};
  const Mat4 unrotate{c, s, 0, 0, -s, c, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  const Mat4 unscale{1 / p.sx, 0, 0, 0, 0, 1 / p.sy, 0, 0, 0, 0, 1 / p.sz, 0, 0, 0, 0, 1};
  return mat4_mul(unscale, mat4_mul(unrotate, untranslate));
}

inline Point3 transform_point(const Point3& q, const AugmentationParams& p) {
  const Real c = std::cos(p.yaw), s = std::sin(p.yaw);
  const Real x = q.x * p.sx, y = q.y * p.sy, z = q.z * p.sz;
  return {c * x - s * y + p.tx, s * x + c * y + p.ty, z + p.tz};
}

/// Scaled and rotated box. With unequal x/y scales the footprint becomes a
/// parallelogram; the result keeps its heading edge length and its exact area.
inline DetectionBox transform_box(const DetectionBox& b, const AugmentationParams& p) {
  DetectionBox out = b;
  const Point3 c = transform_point({b.x, b.y, b.z}, p);
  out.x = c.x;
  out.y = c.y;
  out.z = c.z;
  out.d = b.d * p.sz;
  if (p.sx == p.sy) {
    out.w = b.w * p.sx;
    out.h = b.h * p.sy;
    out.t = b.t + p.yaw;
  } else {
    const Real along = std::hypot(p.sx * std::cos(b.t), p.sy * std::sin(b.t));
    out.w = b.w * along;
    out.h = b.h * p.sx * p.sy / along;
    out.t = std::atan2(p.sy * std::sin(b.t), p.sx * std::cos(b.t)) + p.yaw;
  }
  return out;
}

/// Scales the feature map by `image_scale` about the origin pixel, then shifts it
/// by (du, dv). Pixels sampled from outside the source are zero.
inline Tensor resample_image(const Tensor& img, const AugmentationParams& p) {
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({ch, h, w}, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Real u = (static_cast<Real>(x) - p.du) / p.image_scale, v = (static_cast<Real>(y) - p.dv) / p.image_scale;
      const detail::BilinearTap tap = detail::bilinear_tap(u, v, h, w);
      if (!tap.active) continue;
      for (std::size_t c = 0; c < ch; ++c) {
        Real acc = 0;
        for (int k = 0; k < 4; ++k) acc += tap.weight[k] * img[c * h * w + tap.offset[k]];
        out[(c * h + y) * w + x] = acc;
      }
    }
  return out;
}

/// Applies one joint LIDAR/image transform. The camera becomes
/// A_img · P · M⁻¹ so transformed points land where the transformed image puts them.
inline SceneSample apply_augmentation(const SceneSample& in, const AugmentationParams& p) {
  SceneSample out = in;
  for (Point3& q : out.cloud.points) q = transform_point(q, p);
  for (DetectionBox& b : out.boxes) b = transform_box(b, p);
  out.image_features = resample_image(in.image_features, p);

  const Mat4 minv = inverse_lidar_transform(p);
  const auto& m = in.camera.projection;
  const std::array<Real, 9> a{p.image_scale, 0, p.du, 0, p.image_scale, p.dv, 0, 0, 1};
  Mat3x4 pm{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) pm[i * 4 + j] += m[i * 4 + k] * minv[k * 4 + j];
  Mat3x4 res{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 3; ++k) res[i * 4 + j] += a[i * 3 + k] * pm[k * 4 + j];
  out.camera.projection = res;
  return out;
}

/// Training-time augmentation; never used for evaluation.
inline SceneSample augment(const SceneSample& in, const AugmentationConfig& cfg, std::uint64_t seed) {
  return apply_augmentation(in, sample_augmentation(cfg, seed));
}

}  // namespace contfuse
