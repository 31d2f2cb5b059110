#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "contfuse/iou.hpp"
#include "contfuse/scene.hpp"

namespace contfuse {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClassPrior {
  Real w = 3.9, h = 1.6, d = 1.5;  // mean footprint length, width and height
  Real jitter = 0.08;             // relative half-range of uniform size noise
  bool operator==(const ClassPrior&) const = default;
};

/// Desk-scale world. The ground is the z = 0 plane of the LIDAR frame and the
/// ego vehicle sits at the origin looking along +x.
struct SceneGenConfig {
  Interval place_x{5.0, 22.0};
  Interval place_y{-10.0, 10.0};
  std::size_t min_objects = 2, max_objects = 4;
  std::vector<ClassPrior> classes{ClassPrior{}};
  Real min_gap = 0.5;  // extra clearance between footprints, meters

  std::size_t ground_rays = 1500;
  Interval ground_range{2.0, 30.0};
  Real object_density = 600.0;  // expected returns per m² of facing surface at 1 m
  Real sensor_height = 1.7;     // mount height used for visibility and range falloff
  Real surface_noise = 0.02;    // σ, meters
  Real occlusion_fraction = 0.0;
  std::size_t occluded_max_points = 2;

  std::size_t image_height = 32, image_width = 64, image_channels = 4;
  Real focal = 32.0;
  Real principal_row = 8.0;
  Real camera_height = 1.6;
  Real image_noise = 0.1;

  std::size_t max_retries = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(place_x.max > place_x.min) || !(place_y.max > place_y.min)) throw ConfigError("synthetic: empty placement range");
    if (min_objects > max_objects) throw ConfigError("synthetic: min_objects > max_objects");
    if (classes.empty()) throw ConfigError("synthetic: no classes");
    for (const ClassPrior& c : classes)
      if (!(c.w > 0 && c.h > 0 && c.d > 0) || c.jitter < 0 || c.jitter >= 1) throw ConfigError("synthetic: bad class size prior");
    if (!(ground_range.min > 0 && ground_range.max > ground_range.min)) throw ConfigError("synthetic: bad ground range");
    if (object_density < 0 || surface_noise < 0 || image_noise < 0) throw ConfigError("synthetic: negative density or noise");
    if (occlusion_fraction < 0 || occlusion_fraction > 1) throw ConfigError("synthetic: occlusion_fraction outside [0, 1]");
    if (image_height < 2 || image_width < 2 || image_channels < 1 || !(focal > 0))
      throw ConfigError("synthetic: bad camera");
  }
  bool operator==(const SceneGenConfig&) const = default;
};

/// Pinhole camera at (0, 0, camera_height) looking along +x, image rows growing downward.
inline CalibratedCamera synthetic_camera(const SceneGenConfig& cfg) {
  const Real f = cfg.focal, cx = (static_cast<Real>(cfg.image_width) - 1.0) / 2.0, cy = cfg.principal_row;
  return {{cx, -f, 0, 0, cy, 0, -f, f * cfg.camera_height, 1, 0, 0, 0}, cfg.image_height, cfg.image_width};
}

inline std::array<Point3, 8> box_corners_3d(const DetectionBox& b) {
  const auto bev = bev_corners(b);
  std::array<Point3, 8> out;
  for (int i = 0; i < 4; ++i) {
    out[i] = {bev[i].x, bev[i].y, b.z - b.d / 2};
    out[i + 4] = {bev[i].x, bev[i].y, b.z + b.d / 2};
  }
  return out;
}

inline bool box_in_view(const DetectionBox& b, const CalibratedCamera& cam) {
  for (const Point3& c : box_corners_3d(b))
    if (!project_point(c, cam).valid) return false;
  return true;
}

inline bool footprint_contains(const DetectionBox& b, Real x, Real y) {
  const Real c = std::cos(b.t), s = std::sin(b.t);
  const Real lx = c * (x - b.x) + s * (y - b.y), ly = -s * (x - b.x) + c * (y - b.y);
  return std::abs(lx) <= b.w / 2 && std::abs(ly) <= b.h / 2;
}

namespace detail {

struct Face {
  Point3 center, normal, axis_a, axis_b;
  Real len_a = 0, len_b = 0;
};

inline std::array<Face, 5> sensor_candidate_faces(const DetectionBox& b) {
  const Real c = std::cos(b.t), s = std::sin(b.t);
  const Point3 fwd{c, s, 0}, left{-s, c, 0}, up{0, 0, 1};
  auto shifted = [&](const Point3& dir, Real dist) {
    return Point3{b.x + dir.x * dist, b.y + dir.y * dist, b.z + dir.z * dist};
  };
  auto neg = [](const Point3& p) { return Point3{-p.x, -p.y, -p.z}; };
  return {{{shifted(fwd, b.w / 2), fwd, left, up, b.h, b.d},
           {shifted(neg(fwd), b.w / 2), neg(fwd), left, up, b.h, b.d},
           {shifted(left, b.h / 2), left, fwd, up, b.w, b.d},
           {shifted(neg(left), b.h / 2), neg(left), fwd, up, b.w, b.d},
           {shifted(up, b.d / 2), up, fwd, left, b.w, b.h}}};
}

inline Real facing_cosine(const Face& f, const Point3& sensor, Real& dist2) {
  const Real dx = sensor.x - f.center.x, dy = sensor.y - f.center.y, dz = sensor.z - f.center.z;
  dist2 = dx * dx + dy * dy + dz * dz;
  return (f.normal.x * dx + f.normal.y * dy + f.normal.z * dz) / std::sqrt(dist2);
}

inline Point3 sample_on_face(const Face& f, Real noise, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> unit(-0.5, 0.5);
  std::normal_distribution<Real> jitter(0.0, noise > 0 ? noise : 1.0);
  const Real a = unit(rng) * f.len_a, b = unit(rng) * f.len_b;
  const Real n = noise > 0 ? jitter(rng) : 0.0;
  return {f.center.x + a * f.axis_a.x + b * f.axis_b.x + n * f.normal.x,
          f.center.y + a * f.axis_a.y + b * f.axis_b.y + n * f.normal.y,
          f.center.z + a * f.axis_a.z + b * f.axis_b.z + n * f.normal.z};
}

}  // namespace detail

/// Returns on the sensor-facing faces of `b`. The expected count per face is
/// density · area · cos(incidence) / range², so far objects are sparser. An
/// occluded box instead gets 0..occluded_max_points returns.
inline std::vector<Point3> sample_object_points(const DetectionBox& b, bool occluded, const SceneGenConfig& cfg,
                                                std::mt19937_64& rng) {
  const Point3 sensor{0, 0, cfg.sensor_height};
  std::vector<detail::Face> visible;
  std::vector<Real> expected;
  for (const detail::Face& f : detail::sensor_candidate_faces(b)) {
    Real dist2 = 0;
    const Real cosine = detail::facing_cosine(f, sensor, dist2);
    if (cosine <= 0) continue;
    visible.push_back(f);
    expected.push_back(cfg.object_density * f.len_a * f.len_b * cosine / dist2);
  }
  std::vector<Point3> out;
  if (visible.empty()) return out;
  if (occluded) {
    std::uniform_int_distribution<std::size_t> count(0, cfg.occluded_max_points);
    std::discrete_distribution<std::size_t> face(expected.begin(), expected.end());
    const std::size_t n = count(rng);
    for (std::size_t i = 0; i < n; ++i) out.push_back(detail::sample_on_face(visible[face(rng)], cfg.surface_noise, rng));
    return out;
  }
  for (std::size_t i = 0; i < visible.size(); ++i) {
    if (!(expected[i] > 0)) continue;
    const std::size_t n = std::poisson_distribution<std::size_t>(expected[i])(rng);
    for (std::size_t j = 0; j < n; ++j) out.push_back(detail::sample_on_face(visible[i], cfg.surface_noise, rng));
  }
  return out;
}

/// Ground returns with areal density ∝ 1/r² (r log-uniform) inside the camera
/// field of view, minus those under an object footprint.
inline std::vector<Point3> sample_ground_points(const std::vector<DetectionBox>& boxes, const SceneGenConfig& cfg,
                                                std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> unit(0.0, 1.0), bearing(-std::numbers::pi / 3, std::numbers::pi / 3);
  std::normal_distribution<Real> noise(0.0, cfg.surface_noise > 0 ? cfg.surface_noise : 1.0);
  const Real ratio = cfg.ground_range.max / cfg.ground_range.min;
  std::vector<Point3> out;
  for (std::size_t i = 0; i < cfg.ground_rays; ++i) {
    const Real r = cfg.ground_range.min * std::pow(ratio, unit(rng));
    const Real a = bearing(rng);
    const Real z = cfg.surface_noise > 0 ? noise(rng) : 0.0;
    const Point3 p{r * std::cos(a), r * std::sin(a), z};
    if (std::any_of(boxes.begin(), boxes.end(), [&](const DetectionBox& b) { return footprint_contains(b, p.x, p.y); }))
      continue;
    out.push_back(p);
  }
  return out;
}

/// Feature map: channel 0 is 1 inside each box's projected 2D bounding box,
/// the remaining channels are Gaussian noise.
inline Tensor render_image_features(const std::vector<DetectionBox>& boxes, const CalibratedCamera& cam,
                                   const SceneGenConfig& cfg, std::mt19937_64& rng) {
  const std::size_t h = cfg.image_height, w = cfg.image_width;
  Tensor img({cfg.image_channels, h, w}, 0.0);
  for (const DetectionBox& b : boxes) {
    Real u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
    for (const Point3& c : box_corners_3d(b)) {
      const Projection p = project_point(c, cam);
      if (!(p.depth > 0)) continue;
      u0 = std::min(u0, p.u), u1 = std::max(u1, p.u), v0 = std::min(v0, p.v), v1 = std::max(v1, p.v);
    }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (x >= u0 && x <= u1 && y >= v0 && y <= v1) img.at(0, y, x) = 1.0;
  }
  std::normal_distribution<Real> noise(0.0, cfg.image_noise > 0 ? cfg.image_noise : 1.0);
  for (std::size_t c = 1; c < cfg.image_channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) img.at(c, y, x) = cfg.image_noise > 0 ? noise(rng) : 0.0;
  return img;
}

/// Renders a scene around fixed boxes; `occluded[i]` marks boxes that get almost no returns.
inline SceneSample render_scene(const std::vector<DetectionBox>& boxes, const std::vector<bool>& occluded,
                                const SceneGenConfig& cfg, std::mt19937_64& rng) {
  SceneSample s;
  s.camera = synthetic_camera(cfg);
  s.boxes = boxes;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (const Point3& p : sample_object_points(boxes[i], i < occluded.size() && occluded[i], cfg, rng)) {
      s.cloud.points.push_back(p);
      s.cloud.intensity.push_back(0.8);
    }
  }
  for (const Point3& p : sample_ground_points(boxes, cfg, rng)) {
    s.cloud.points.push_back(p);
    s.cloud.intensity.push_back(0.2);
  }
  s.image_features = render_image_features(boxes, s.camera, cfg, rng);
  return s;
}

/// Non-overlapping boxes, each fully inside the camera view.
inline std::vector<DetectionBox> place_boxes(const SceneGenConfig& cfg, std::mt19937_64& rng) {
  const CalibratedCamera cam = synthetic_camera(cfg);
  std::uniform_int_distribution<std::size_t> count(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<std::size_t> cls(0, cfg.classes.size() - 1);
  std::uniform_real_distribution<Real> ux(cfg.place_x.min, cfg.place_x.max), uy(cfg.place_y.min, cfg.place_y.max),
      yaw(-std::numbers::pi / 2, std::numbers::pi / 2), jit(-1.0, 1.0);
  const std::size_t n = count(rng);
  std::vector<DetectionBox> boxes;
  for (std::size_t i = 0; i < n; ++i) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      const std::size_t c = cls(rng);
      const ClassPrior& prior = cfg.classes[c];
      DetectionBox b;
      b.class_id = static_cast<int>(c);
      b.w = prior.w * (1 + prior.jitter * jit(rng));
      b.h = prior.h * (1 + prior.jitter * jit(rng));
      b.d = prior.d * (1 + prior.jitter * jit(rng));
      b.x = ux(rng);
      b.y = uy(rng);
      b.z = b.d / 2;
      b.t = yaw(rng);
      if (!box_in_view(b, cam)) continue;
      DetectionBox padded = b;
      padded.w += cfg.min_gap;
      padded.h += cfg.min_gap;
      const bool clear = std::none_of(boxes.begin(), boxes.end(),
                                      [&](const DetectionBox& o) { return bev_intersection_area(padded, o) > 0; });
      if (clear) {
        boxes.push_back(b);
        placed = true;
      }
    }
    if (!placed) throw GenerationError("could not place object " + std::to_string(i) + " after " +
                                       std::to_string(cfg.max_retries) + " attempts");
  }
  return boxes;
}

inline SceneSample generate_scene(const SceneGenConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const std::vector<DetectionBox> boxes = place_boxes(cfg, rng);
  const std::size_t n_occluded = static_cast<std::size_t>(std::lround(cfg.occlusion_fraction * static_cast<Real>(boxes.size())));
  std::vector<std::size_t> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> occluded(boxes.size(), false);
  for (std::size_t i = 0; i < n_occluded; ++i) occluded[order[i]] = true;
  SceneSample s = render_scene(boxes, occluded, cfg, rng);
  s.frame_id = "synth-" + std::to_string(cfg.seed);
  return s;
}

/// Points of `cloud` inside box `b` grown by `tolerance`, ignoring anything
/// within `ground_clearance` of the box bottom so ground returns are not counted.
inline std::size_t points_in_box(const PointCloud& cloud, const DetectionBox& b, Real tolerance = 0.1,
                                 Real ground_clearance = 0.1) {
  DetectionBox grown = b;
  grown.w += 2 * tolerance;
  grown.h += 2 * tolerance;
  std::size_t n = 0;
  for (const Point3& p : cloud.points)
    if (footprint_contains(grown, p.x, p.y) && p.z >= b.z - b.d / 2 + ground_clearance &&
        p.z <= b.z + b.d / 2 + tolerance)
      ++n;
  return n;
}

}  // namespace contfuse
