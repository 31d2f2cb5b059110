#pragma once

// KITTI object-detection files.
//
// Labels live in the rectified camera frame (x right, y down, z forward) with
// the location at the bottom center of the box and dimensions ordered
// height, width, length. Boxes here live in the LIDAR frame with a centered z,
// so on load:
//   center = inv(R0_rect · Tr_velo_to_cam) · (loc − (0, height/2, 0))
//   w, h, d = length, width, height
//   yaw     = heading of the camera-frame direction (cos ry, 0, −sin ry) after
//             mapping it into the LIDAR frame; −ry − π/2 for the usual extrinsic.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "contfuse/augment.hpp"
#include "contfuse/scene.hpp"
#include "contfuse/synthetic.hpp"

namespace contfuse {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KittiCalib {
  Mat3x4 p2{};
  std::array<Real, 9> r0_rect{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Mat3x4 tr_velo_to_cam{};

  /// Homogeneous LIDAR → rectified camera transform.
  Mat4 velo_to_rect() const {
    const Mat4 r{r0_rect[0], r0_rect[1], r0_rect[2], 0, r0_rect[3], r0_rect[4], r0_rect[5], 0,
                 r0_rect[6], r0_rect[7], r0_rect[8], 0, 0,          0,          0,          1};
    Mat4 t{};
    for (int i = 0; i < 12; ++i) t[i] = tr_velo_to_cam[i];
    t[15] = 1;
    return mat4_mul(r, t);
  }

  CalibratedCamera camera(std::size_t height, std::size_t width) const {
    const Mat4 vr = velo_to_rect();
    Mat3x4 p{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) p[i * 4 + j] += p2[i * 4 + k] * vr[k * 4 + j];
    return {p, height, width};
  }
};

/// Inverse of a rigid-plus-linear 4×4 with last row (0, 0, 0, 1).
inline Mat4 invert_affine(const Mat4& m) {
  const Real a = m[0], b = m[1], c = m[2], d = m[4], e = m[5], f = m[6], g = m[8], h = m[9], i = m[10];
  const Real det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
  if (std::abs(det) < 1e-12) throw ParseError("calibration transform is singular");
  const std::array<Real, 9> inv{(e * i - f * h) / det, (c * h - b * i) / det, (b * f - c * e) / det,
                                (f * g - d * i) / det, (a * i - c * g) / det, (c * d - a * f) / det,
                                (d * h - e * g) / det, (b * g - a * h) / det, (a * e - b * d) / det};
  Mat4 out{};
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) out[r * 4 + k] = inv[r * 3 + k];
    out[r * 4 + 3] = -(inv[r * 3] * m[3] + inv[r * 3 + 1] * m[7] + inv[r * 3 + 2] * m[11]);
  }
  out[15] = 1;
  return out;
}

inline Point3 apply_affine(const Mat4& m, const Point3& p) {
  return {m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3], m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
          m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11]};
}

inline Point3 apply_linear(const Mat4& m, const Point3& p) {
  return {m[0] * p.x + m[1] * p.y + m[2] * p.z, m[4] * p.x + m[5] * p.y + m[6] * p.z,
          m[8] * p.x + m[9] * p.y + m[10] * p.z};
}

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Real parse_real(const std::string& tok, const std::string& where) {
  try {
    std::size_t used = 0;
    const Real v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": '" + tok + "' is not a number");
  }
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string tok; ss >> tok;) out.push_back(tok);
  return out;
}

}  // namespace detail

/// Consecutive little-endian float32 records (x, y, z, intensity).
inline PointCloud parse_velodyne(const std::string& bytes, const std::string& name = "velodyne") {
  if (bytes.size() % 16 != 0)
    throw ParseError(name + ": size " + std::to_string(bytes.size()) + " is not a multiple of 16 bytes (offset " +
                     std::to_string(bytes.size() - bytes.size() % 16) + " starts a partial record)");
  PointCloud cloud;
  const std::size_t n = bytes.size() / 16;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    float v[4];
    for (int k = 0; k < 4; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 16 + k * 4 + b])) << (8 * b);
      v[k] = std::bit_cast<float>(bits);
    }
    cloud.points.push_back({v[0], v[1], v[2]});
    cloud.intensity.push_back(v[3]);
  }
  return cloud;
}

inline PointCloud read_velodyne(const std::string& path) { return parse_velodyne(detail::read_file(path), path); }

inline std::string encode_velodyne(const PointCloud& cloud) {
  std::string out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.points[i];
    const float v[4] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                        static_cast<float>(i < cloud.intensity.size() ? cloud.intensity[i] : 0.0)};
    for (float f : v) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  return out;
}

/// "KEY: v1 v2 ..." lines; P2, R0_rect and Tr_velo_to_cam are required, other keys ignored.
inline KittiCalib parse_calib(const std::string& text, const std::string& name = "calib") {
  std::map<std::string, std::vector<Real>> values;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    const std::string where = name + ":" + std::to_string(lineno);
    if (colon == std::string::npos) throw ParseError(where + ": expected 'KEY: values'");
    const std::string key = line.substr(0, colon);
    std::vector<Real> v;
    for (const std::string& tok : detail::split_ws(line.substr(colon + 1))) v.push_back(detail::parse_real(tok, where));
    values[key] = std::move(v);
  }
  auto take = [&](const std::string& key, std::size_t count, Real* dst) {
    const auto it = values.find(key);
    if (it == values.end()) throw ParseError(name + ": missing key " + key);
    if (it->second.size() != count)
      throw ParseError(name + ": " + key + " has " + std::to_string(it->second.size()) + " values, expected " +
                       std::to_string(count));
    std::copy(it->second.begin(), it->second.end(), dst);
  };
  KittiCalib c;
  take("P2", 12, c.p2.data());
  take("R0_rect", 9, c.r0_rect.data());
  take("Tr_velo_to_cam", 12, c.tr_velo_to_cam.data());
  return c;
}

inline KittiCalib read_calib(const std::string& path) { return parse_calib(detail::read_file(path), path); }

/// Class ids for known KITTI types. 'Van' and 'DontCare' (and any type not in
/// `classes`) load as ignore boxes.
struct KittiClassMap {
  std::vector<std::string> classes{"Car", "Pedestrian", "Cyclist"};

  int id_of(const std::string& type) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == type) return static_cast<int>(i);
    return -1;
  }
  std::string name_of(int id) const {
    return id >= 0 && static_cast<std::size_t>(id) < classes.size() ? classes[static_cast<std::size_t>(id)] : "DontCare";
  }
};

inline std::vector<DetectionBox> parse_kitti_labels(const std::string& text, const KittiCalib& calib,
                                                    const KittiClassMap& classes = {},
                                                    const std::string& name = "label") {
  const Mat4 to_velo = invert_affine(calib.velo_to_rect());
  std::vector<DetectionBox> out;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    if (tok.size() != 15 && tok.size() != 16)
      throw ParseError(where + ": expected 15 or 16 fields, found " + std::to_string(tok.size()));
    std::vector<Real> f;
    for (std::size_t i = 1; i < tok.size(); ++i) f.push_back(detail::parse_real(tok[i], where + " field " + std::to_string(i + 1)));
    // f: truncated, occluded, alpha, left, top, right, bottom, height, width, length, x, y, z, ry[, score]
    const Real height = f[7], width = f[8], length = f[9], ry = f[13];
    DetectionBox b;
    const int id = classes.id_of(tok[0]);
    b.class_id = id < 0 ? 0 : id;
    b.ignore = id < 0;
    b.score = tok.size() == 16 ? f[14] : 1.0;
    b.image_height = f[6] - f[4];
    b.w = length;
    b.h = width;
    b.d = height;
    const Point3 c = apply_affine(to_velo, {f[10], f[11] - height / 2, f[12]});
    b.x = c.x;
    b.y = c.y;
    b.z = c.z;
    const Point3 heading = apply_linear(to_velo, {std::cos(ry), 0.0, -std::sin(ry)});
    b.t = std::atan2(heading.y, heading.x);
    out.push_back(b);
  }
  return out;
}

inline std::vector<DetectionBox> read_kitti_labels(const std::string& path, const KittiCalib& calib,
                                                   const KittiClassMap& classes = {}) {
  return parse_kitti_labels(detail::read_file(path), calib, classes, path);
}

/// Label lines for LIDAR-frame boxes, two decimals per field plus a trailing
/// score. The 2D box is the unclipped projection of the 3D corners through P2.
inline std::string format_kitti_labels(const std::vector<DetectionBox>& boxes, const KittiCalib& calib,
                                       const KittiClassMap& classes = {}) {
  const Mat4 to_rect = calib.velo_to_rect();
  std::string out;
  char buf[512];
  for (const DetectionBox& b : boxes) {
    const Point3 c = apply_affine(to_rect, {b.x, b.y, b.z});
    const Point3 dir = apply_linear(to_rect, {std::cos(b.t), std::sin(b.t), 0.0});
    const Real ry = std::atan2(-dir.z, dir.x);
    const Real alpha = ry - std::atan2(c.x, c.z);
    Real u0 = 1e300, v0 = 1e300, u1 = -1e300, v1 = -1e300;
    for (const Point3& corner : box_corners_3d(b)) {
      const Point3 r = apply_affine(to_rect, corner);
      const auto& p = calib.p2;
      const Real w = p[8] * r.x + p[9] * r.y + p[10] * r.z + p[11];
      if (!(w > 0)) continue;
      const Real u = (p[0] * r.x + p[1] * r.y + p[2] * r.z + p[3]) / w;
      const Real v = (p[4] * r.x + p[5] * r.y + p[6] * r.z + p[7]) / w;
      u0 = std::min(u0, u), u1 = std::max(u1, u), v0 = std::min(v0, v), v1 = std::max(v1, v);
    }
    if (u0 > u1) u0 = v0 = u1 = v1 = 0;
    const std::string type = b.ignore ? "DontCare" : classes.name_of(b.class_id);
    // Values that round to zero print as "0.00" rather than "-0.00".
    const auto f = [](Real v) { return std::abs(v) < 0.005 ? 0.0 : v; };
    std::snprintf(buf, sizeof buf, "%s 0.00 0 %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.4f\n",
                  type.c_str(), f(alpha), f(u0), f(v0), f(u1), f(v1), f(b.d), f(b.h), f(b.w), f(c.x),
                  f(c.y + b.d / 2), f(c.z), f(ry), b.score);
    out += buf;
  }
  return out;
}

inline void write_kitti_labels(const std::vector<DetectionBox>& boxes, const std::string& path,
                               const KittiCalib& calib, const KittiClassMap& classes = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f << format_kitti_labels(boxes, calib, classes);
  if (!f) throw std::runtime_error(path + ": write failed");
}

struct KittiImageSize {
  std::size_t height = 375, width = 1242;
};

/// Loads a frame. KITTI ships RGB images, not feature maps, so the feature input
/// is a single zero channel at the image size.
inline SceneSample load_kitti_frame(const std::string& velodyne_path, const std::string& calib_path,
                                    const std::string& label_path, const KittiImageSize& size = {},
                                    const KittiClassMap& classes = {}) {
  SceneSample s;
  s.cloud = read_velodyne(velodyne_path);
  const KittiCalib calib = read_calib(calib_path);
  s.camera = calib.camera(size.height, size.width);
  s.boxes = read_kitti_labels(label_path, calib, classes);
  s.image_features = Tensor({1, size.height, size.width}, 0.0);
  s.frame_id = velodyne_path;
  return s;
}

}  // namespace contfuse
