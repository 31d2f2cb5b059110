#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "contfuse/checkpoint.hpp"
#include "contfuse/scene.hpp"
#include "contfuse/synthetic.hpp"

namespace contfuse {

inline constexpr const char* kGeneratorVersion = "contfuse-synthetic-1";
inline constexpr std::size_t kBoxFields = 12;

/// Frame file: the checkpoint container with records points [N×3],
/// intensity [N], image [C×H×W], camera [14] (projection, height, width) and
/// boxes [B×12] (class, score, x, y, z, w, h, d, t, ignore, image height, variant).
inline std::string encode_scene(const SceneSample& s) {
  std::vector<Real> pts;
  pts.reserve(s.cloud.size() * 3);
  for (const Point3& p : s.cloud.points) pts.insert(pts.end(), {p.x, p.y, p.z});
  std::vector<Real> cam(s.camera.projection.begin(), s.camera.projection.end());
  cam.push_back(static_cast<Real>(s.camera.height));
  cam.push_back(static_cast<Real>(s.camera.width));
  std::vector<Real> boxes;
  for (const DetectionBox& b : s.boxes)
    boxes.insert(boxes.end(), {static_cast<Real>(b.class_id), b.score, b.x, b.y, b.z, b.w, b.h, b.d, b.t,
                               b.ignore ? 1.0 : 0.0, b.image_height, static_cast<Real>(static_cast<int>(b.variant))});
  std::vector<Real> intensity = s.cloud.intensity;
  intensity.resize(s.cloud.size(), 0.0);
  return encode_checkpoint({{"points", Tensor({s.cloud.size(), 3}, std::move(pts))},
                            {"intensity", Tensor({s.cloud.size()}, std::move(intensity))},
                            {"image", s.image_features},
                            {"camera", Tensor({14}, std::move(cam))},
                            {"boxes", Tensor({s.boxes.size(), kBoxFields}, std::move(boxes))}});
}

inline SceneSample decode_scene(const std::string& bytes, std::string frame_id) {
  const NamedTensors rec = decode_checkpoint(bytes);
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : rec)
      if (n == name) return t;
    throw CheckpointError("scene file lacks record '" + name + "'");
  };
  SceneSample s;
  s.frame_id = std::move(frame_id);
  const Tensor& pts = find("points");
  const Tensor& inten = find("intensity");
  if (pts.rank() != 2 || pts.dim(1) != 3 || inten.numel() != pts.dim(0)) throw CheckpointError("scene: bad point records");
  for (std::size_t i = 0; i < pts.dim(0); ++i) s.cloud.points.push_back({pts[i * 3], pts[i * 3 + 1], pts[i * 3 + 2]});
  s.cloud.intensity = inten.values();
  s.image_features = find("image");
  const Tensor& cam = find("camera");
  if (cam.numel() != 14) throw CheckpointError("scene: bad camera record");
  for (std::size_t i = 0; i < 12; ++i) s.camera.projection[i] = cam[i];
  s.camera.height = static_cast<std::size_t>(cam[12]);
  s.camera.width = static_cast<std::size_t>(cam[13]);
  const Tensor& boxes = find("boxes");
  if (boxes.numel() % kBoxFields != 0) throw CheckpointError("scene: bad box record");
  for (std::size_t i = 0; i < boxes.numel() / kBoxFields; ++i) {
    const Real* f = boxes.data().data() + i * kBoxFields;
    DetectionBox b;
    b.class_id = static_cast<int>(f[0]);
    b.score = f[1];
    b.x = f[2], b.y = f[3], b.z = f[4], b.w = f[5], b.h = f[6], b.d = f[7], b.t = f[8];
    b.ignore = f[9] != 0.0;
    b.image_height = f[10];
    b.variant = static_cast<BoxVariant>(static_cast<int>(f[11]));
    s.boxes.push_back(b);
  }
  return s;
}

struct DatasetEntry {
  std::string id;
  std::uint64_t seed = 0;
  std::string file;
};

/// Writes one file per frame plus index.json listing ids, seeds and the generator version.
inline void write_dataset(const std::filesystem::path& dir, const std::vector<SceneSample>& frames,
                          const std::vector<std::uint64_t>& seeds) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json index;
  index["generator"] = kGeneratorVersion;
  index["frames"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string file = "frame_" + std::to_string(i) + ".scene";
    std::ofstream f(dir / file, std::ios::binary);
    const std::string bytes = encode_scene(frames[i]);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("cannot write " + (dir / file).string());
    index["frames"].push_back({{"id", frames[i].frame_id}, {"seed", i < seeds.size() ? seeds[i] : 0}, {"file", file}});
  }
  std::ofstream idx(dir / "index.json");
  idx << index.dump(2) << "\n";
  if (!idx) throw std::runtime_error("cannot write " + (dir / "index.json").string());
}

inline std::vector<DatasetEntry> read_dataset_index(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw std::runtime_error("missing " + (dir / "index.json").string());
  const auto index = nlohmann::json::parse(in);
  if (index.value("generator", "") != kGeneratorVersion)
    throw std::runtime_error("dataset generator version " + index.value("generator", "?") + " is not supported");
  std::vector<DatasetEntry> out;
  for (const auto& f : index.at("frames"))
    out.push_back({f.at("id").get<std::string>(), f.at("seed").get<std::uint64_t>(), f.at("file").get<std::string>()});
  return out;
}

inline std::vector<SceneSample> read_dataset(const std::filesystem::path& dir) {
  std::vector<SceneSample> out;
  for (const DatasetEntry& e : read_dataset_index(dir)) {
    std::ifstream f(dir / e.file, std::ios::binary);
    if (!f) throw std::runtime_error("missing frame file " + (dir / e.file).string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    out.push_back(decode_scene(bytes, e.id));
  }
  return out;
}

/// Scenes for seeds base_seed, base_seed + 1, …
inline std::vector<SceneSample> generate_scenes(SceneGenConfig cfg, std::size_t count, std::uint64_t base_seed) {
  std::vector<SceneSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    cfg.seed = base_seed + i;
    out.push_back(generate_scene(cfg));
  }
  return out;
}

}  // namespace contfuse
