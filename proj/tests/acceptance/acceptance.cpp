// Acceptance suite: one PASS/FAIL line per criterion, tolerances fixed here.
// Exits non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "contfuse/experiment.hpp"
#include "contfuse/kitti.hpp"
#include "contfuse/synthetic.hpp"
#include "../oracles.hpp"
#include "../test_util.hpp"

using namespace contfuse;
namespace oracle = contfuse::testing;

namespace {

const std::string kConfigs = std::string(CONTFUSE_SOURCE_DIR) + "/configs/";
const std::string kFixtures = std::string(CONTFUSE_FIXTURE_DIR) + "/kitti/";
constexpr Real kInf = std::numeric_limits<Real>::infinity();
constexpr Real kPi = std::numbers::pi;

// ---- pinned tolerances ----------------------------------------------------
constexpr Real kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 60.0;
constexpr Real kFusionTolerance = 1e-10;
constexpr Real kIouTolerance = 1e-3;
constexpr std::size_t kIouSamples = 1000000;
constexpr Real kRoundTripTolerance = 1e-10;
constexpr Real kOverfitLossRatio = 0.05;
constexpr Real kOverfitAp = 0.95;
constexpr double kOverfitBudgetSeconds = 300.0;
constexpr Real kApPointsGap = 0.05;
constexpr Real kLabelPrecision = 1e-2;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("contfuse_accept_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string read_all(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Relative paths of every regular file under `root`, sorted.
std::vector<std::string> tree(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).string());
  std::sort(out.begin(), out.end());
  return out;
}

// (u, v) of a point through a 3×4 projection, or nothing when behind the camera.
std::optional<std::pair<Real, Real>> project(const Mat3x4& p, const Point3& q) {
  const Real w = p[8] * q.x + p[9] * q.y + p[10] * q.z + p[11];
  if (!(w > 1e-9)) return std::nullopt;
  return std::make_pair((p[0] * q.x + p[1] * q.y + p[2] * q.z + p[3]) / w,
                        (p[4] * q.x + p[5] * q.y + p[6] * q.z + p[7]) / w);
}

Real primary_ap(const Json& report) { return report.at("classes")[0].at("ap").at("0.50").at("11").get<Real>(); }

// ---- 1 ---------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const GradCheckReport r = gradcheck_run(kGradTolerance);
  const double secs = seconds_since(t0);
  Real worst = 0;
  std::string worst_name, failed;
  for (const GradCheckResult& c : r.results) {
    if (c.max_rel_error >= worst) worst = c.max_rel_error, worst_name = c.name;
    if (!c.passed) failed += " " + c.name;
  }
  const bool ok = r.passed && secs < kGradBudgetSeconds;
  return {ok, std::to_string(r.results.size()) + " cases, worst " + fmt(worst) + " (" + worst_name + "), " +
                  fmt(secs, 3) + " s" + (failed.empty() ? "" : ", failed:" + failed)};
}

// ---- 2 ---------------------------------------------------------------------

bool knn_matches_linear_scan(std::string& why) {
  std::mt19937_64 rng(200);
  std::uniform_real_distribution<Real> x(0, 40), y(-20, 20), z(-1, 2);
  PointCloud cloud;
  for (int i = 0; i < 500; ++i) cloud.points.push_back({x(rng), y(rng), z(rng)});
  // Duplicated coordinates exercise the index tie-break.
  for (int i = 0; i < 20; ++i) cloud.points[480 + i] = cloud.points[i];
  const BevIndex index = build_bev_index(cloud);
  for (int q = 0; q < 100; ++q) {
    const Real qx = x(rng), qy = y(rng);
    for (std::size_t k : {1u, 5u, 32u})
      for (Real d : {2.5, kInf}) {
        const auto got = knn_bev(qx, qy, index, k, d);
        const auto want = oracle::linear_scan_knn(qx, qy, cloud, k, d);
        bool same = got.size() == want.size();
        for (std::size_t i = 0; same && i < got.size(); ++i)
          same = got[i].index == want[i].index && got[i].dist2 == want[i].dist2;
        if (!same) {
          why = "knn query " + std::to_string(q) + " k=" + std::to_string(k);
          return false;
        }
      }
  }
  return true;
}

Real fusion_vs_loop_nest() {
  Real worst = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    std::mt19937_64 rng(300 + seed);
    std::uniform_real_distribution<Real> dx(0.2, 5.8), dy(-2.8, 2.8), dz(-0.5, 2.0), dp(-0.3, 0.3);
    PointCloud cloud;
    for (int i = 0; i < 9; ++i) cloud.points.push_back({dx(rng), dy(rng), dz(rng)});
    const CalibratedCamera cam{{4.0, -4.0 + dp(rng), dp(rng), 0.5, 3.0, 0.2 + dp(rng), -3.0, 6.0, 1.0, 0.0, 0.0, 0.5},
                               8, 10};
    const Tensor feats = oracle::random_tensor({3, 8, 10}, rng);
    const BevGrid grid({0, 6}, {-3, 3}, {-1, 3}, 6, 6, 2);
    const FusionContext ctx(cloud, cam);
    for (std::size_t k : {1u, 3u})
      for (Real d : {1.5, kInf})
        for (bool geo : {true, false}) {
          FusionConfig cfg{k, d, geo, true, 3, 4, 1.0};
          Mlp mlp = make_fusion_mlp(cfg, rng);
          for (std::size_t l = 0; l < mlp.num_layers(); ++l)
            for (Real& b : mlp.bias(l).data()) b = 0.1 * static_cast<Real>(l + 1);
          const Tensor got = continuous_fusion_forward(feats, ctx, grid, cfg, mlp);
          const Tensor want = oracle::loop_nest_fusion(feats, cloud, cam, grid, cfg, mlp);
          for (std::size_t i = 0; i < want.numel(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
        }
  }
  return worst;
}

DetectionBox bev_box(Real x, Real y, Real w, Real h, Real t, Real score = 1.0, int cls = 0) {
  DetectionBox b;
  b.x = x, b.y = y, b.w = w, b.h = h, b.t = t, b.score = score, b.class_id = cls;
  return b;
}

bool nms_matches_reference(std::string& why) {
  std::mt19937_64 rng(400);
  std::uniform_real_distribution<Real> pos(0, 15), size(1, 4), ang(-kPi, kPi), score(0, 1);
  std::uniform_int_distribution<int> cls(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<DetectionBox> boxes;
    for (int i = 0; i < 80; ++i)
      boxes.push_back(
          bev_box(pos(rng), pos(rng), size(rng), size(rng), ang(rng), std::round(score(rng) * 20) / 20, cls(rng)));
    for (Real thr : {0.1, 0.5}) {
      const NmsOptions opts{thr, 0.1, std::numeric_limits<std::size_t>::max()};
      const auto got = nms(boxes, opts);
      const auto want = oracle::reference_nms(boxes, thr, opts.score_threshold);
      bool same = got.size() == want.size();
      for (std::size_t i = 0; same && i < got.size(); ++i)
        same = got[i].x == want[i].x && got[i].y == want[i].y && got[i].score == want[i].score &&
               got[i].class_id == want[i].class_id;
      if (!same) {
        why = "nms trial " + std::to_string(trial);
        return false;
      }
    }
  }
  return true;
}

// Jittered-grid Monte Carlo over box A: the hit rate inside B estimates |A∩B| / |A|.
Real stratified_mc_iou(const DetectionBox& a, const DetectionBox& b, std::size_t samples, std::uint64_t seed) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(samples))));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> jitter(0, 1);
  const Real c = std::cos(a.t), s = std::sin(a.t);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j) {
      const Real u = ((i + jitter(rng)) / side - 0.5) * a.w, v = ((j + jitter(rng)) / side - 0.5) * a.h;
      hits += oracle::inside(b, a.x + c * u - s * v, a.y + s * u + c * v);
    }
  const Real inter = a.w * a.h * static_cast<Real>(hits) / static_cast<Real>(side * side);
  return inter / (a.w * a.h + b.w * b.h - inter);
}

Real iou_vs_monte_carlo() {
  std::mt19937_64 rng(500);
  std::uniform_real_distribution<Real> pos(-1.5, 1.5), size(0.5, 3), ang(-kPi, kPi);
  std::vector<std::pair<DetectionBox, DetectionBox>> pairs{
      {bev_box(0, 0, 1, 1, 0), bev_box(0, 0, 1, 1, kPi / 4)}, {bev_box(0, 0, 4, 2, 0), bev_box(1, 0.5, 4, 2, 0)}};
  for (int n = 0; n < 20; ++n)
    pairs.push_back({bev_box(pos(rng), pos(rng), size(rng), size(rng), ang(rng)),
                     bev_box(pos(rng), pos(rng), size(rng), size(rng), ang(rng))});
  Real worst = 0;
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    const auto& [a, b] = pairs[n];
    worst = std::max(worst, std::abs(rotated_iou_bev(a, b) - stratified_mc_iou(a, b, kIouSamples, 600 + n)));
  }
  return worst;
}

bool ap_matches_staircase(std::string& why) {
  auto box = [](Real x, Real score) {
    DetectionBox b;
    b.x = x, b.z = 0.8, b.w = 4, b.h = 2, b.d = 1.5, b.score = score;
    return b;
  };
  // Ranked TP, FP, TP, FP, TP against three objects.
  const std::vector<DetectionBox> gts{box(5, 1), box(15, 1), box(25, 1)};
  const std::vector<DetectionBox> dets{box(5, 0.9), box(40, 0.8), box(15, 0.7), box(50, 0.6), box(25, 0.5)};
  const std::vector<Real> recall{1.0 / 3, 1.0 / 3, 2.0 / 3, 2.0 / 3, 3.0 / 3};
  const std::vector<Real> precision{1.0 / 1, 1.0 / 2, 2.0 / 3, 2.0 / 4, 3.0 / 5};
  // Interpolated precision is 1 through recall 1/3, 2/3 through 2/3, 3/5 after.
  auto staircase = [](Real r) { return r <= 1.0 / 3 ? 1.0 : r <= 2.0 / 3 ? 2.0 / 3 : 3.0 / 5; };
  for (std::size_t points : {11u, 100u}) {
    EvalConfig cfg;
    cfg.ap_points = points;
    const PrCurve c = evaluate_class({{dets, gts}}, 0, cfg);
    if (c.recall != recall || c.precision != precision) {
      why = "pr curve";
      return false;
    }
    Real total = 0;
    for (std::size_t i = 0; i < points; ++i) total += staircase(static_cast<Real>(i) / static_cast<Real>(points - 1));
    if (!c.ap || *c.ap != total / static_cast<Real>(points)) {
      why = std::to_string(points) + "-point AP " + fmt(c.ap.value_or(-1), 17) + " vs " +
            fmt(total / static_cast<Real>(points), 17);
      return false;
    }
  }
  return true;
}

Outcome oracle_equivalence() {
  std::string why;
  const bool knn = knn_matches_linear_scan(why);
  const Real fusion = fusion_vs_loop_nest();
  const bool nms_ok = nms_matches_reference(why);
  const Real iou = iou_vs_monte_carlo();
  const bool ap = ap_matches_staircase(why);
  const bool ok = knn && fusion <= kFusionTolerance && nms_ok && iou <= kIouTolerance && ap;
  return {ok, std::string("knn ") + (knn ? "exact" : "MISMATCH") + ", fusion max diff " + fmt(fusion) + ", nms " +
                  (nms_ok ? "exact" : "MISMATCH") + ", iou max |err| " + fmt(iou) + ", ap " +
                  (ap ? "exact" : "MISMATCH") + (why.empty() ? "" : " [" + why + "]")};
}

// ---- 3 ---------------------------------------------------------------------

Real max_field_error(const DetectionBox& a, const DetectionBox& b, BoxVariant v) {
  Real e = std::max({std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(a.w - b.w), std::abs(a.h - b.h),
                     std::abs(a.t - b.t)});
  if (v != BoxVariant::Bev) e = std::max({e, std::abs(a.z - b.z), std::abs(a.d - b.d)});
  if (v == BoxVariant::Kitti3d) e = std::max(e, std::abs(a.image_height - b.image_height));
  return e;
}

Outcome encode_decode_round_trip() {
  std::mt19937_64 rng(700);
  std::uniform_real_distribution<Real> pos(-40, 40), size(0.3, 6), ang(-kPi, kPi), hgt(5, 200);
  std::uniform_int_distribution<int> pick(0, 2);
  std::bernoulli_distribution coin(0.5);
  const BoxVariant variants[] = {BoxVariant::Bev, BoxVariant::Full3d, BoxVariant::Kitti3d};
  Real worst = 0;
  std::size_t pairs = 0;
  while (pairs < 10000) {
    const Anchor a{0, pos(rng), pos(rng), pos(rng) / 10, size(rng), size(rng), size(rng), coin(rng) ? 0.0 : kPi / 2,
                   hgt(rng)};
    EncodingOptions o;
    o.center = coin(rng) ? CenterNormalizer::AnchorCoordinate : CenterNormalizer::AnchorDiagonal;
    if (o.center == CenterNormalizer::AnchorCoordinate &&
        (std::abs(a.x) < 1e-2 || std::abs(a.y) < 1e-2 || std::abs(a.z) < 1e-2))
      continue;
    DetectionBox gt;
    gt.x = pos(rng), gt.y = pos(rng), gt.z = pos(rng) / 10;
    gt.w = size(rng), gt.h = size(rng), gt.d = size(rng), gt.t = ang(rng), gt.image_height = hgt(rng);
    const BoxVariant v = variants[pick(rng)];
    worst = std::max(worst, max_field_error(decode_targets(encode_targets(gt, a, v, o), a, v, o), gt, v));
    ++pairs;
  }
  // Zero offsets on the anchor itself; log 2 for doubled sizes.
  const Anchor a{0, 12.0, -3.0, 0.8, 3.9, 1.6, 1.5, kPi / 2, 40.0};
  DetectionBox same;
  same.x = a.x, same.y = a.y, same.z = a.z, same.w = a.w, same.h = a.h, same.d = a.d, same.t = a.t;
  same.image_height = a.image_height;
  bool special = true;
  for (Real p : encode_targets(same, a, BoxVariant::Kitti3d)) special = special && p == 0.0;
  DetectionBox doubled = same;
  doubled.w *= 2, doubled.h *= 2, doubled.d *= 2, doubled.image_height *= 2;
  const auto p = encode_targets(doubled, a, BoxVariant::Kitti3d);
  for (std::size_t i : {3u, 4u, 5u, 7u}) special = special && std::abs(p[i] - std::log(2.0)) <= kRoundTripTolerance;
  const DetectionBox back = decode_targets(p, a, BoxVariant::Kitti3d);
  special = special && max_field_error(back, doubled, BoxVariant::Kitti3d) <= kRoundTripTolerance;
  const DetectionBox zero = decode_targets(std::vector<Real>(8, 0.0), a, BoxVariant::Kitti3d);
  special = special && max_field_error(zero, same, BoxVariant::Kitti3d) == 0.0;
  return {worst <= kRoundTripTolerance && special, std::to_string(pairs) + " pairs, max error " + fmt(worst) +
                                                       ", zero-offset and log-2 cases " + (special ? "ok" : "FAILED")};
}

// ---- 4 ---------------------------------------------------------------------

Outcome overfit() {
  const ExperimentConfig c = load_experiment(kConfigs + "overfit.json", {});
  const auto dir = scratch("overfit");
  const auto t0 = Clock::now();
  const TrainRunResult r = train_run(c, dir);
  const double secs = seconds_since(t0);
  const Real ratio = r.metrics.at("loss_ratio").get<Real>();
  const Real ap = primary_ap(r.metrics.at("eval"));
  fs::remove_all(dir);
  const bool ok = r.log.size() == 300 && ratio <= kOverfitLossRatio && ap >= kOverfitAp && secs < kOverfitBudgetSeconds;
  return {ok, std::to_string(r.log.size()) + " steps, loss ratio " + fmt(ratio) + ", AP@0.5 " + fmt(ap) + ", " +
                  fmt(secs, 3) + " s"};
}

// ---- 5 ---------------------------------------------------------------------

Outcome zeroed_fusion_identity() {
  ModelConfig plain_cfg;
  plain_cfg.fusion.mode = FusionMode::None;
  const ModelConfig fused_cfg;
  std::size_t scenes = 0, detections = 0;
  bool identical = true;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    SceneGenConfig g;
    g.seed = 800 + seed;
    g.occlusion_fraction = 0.5;
    const SceneSample scene = generate_scene(g);
    const Detector plain(plain_cfg, 900 + seed);
    Detector fused(fused_cfg, 900 + seed);
    for (Mlp& mlp : fused.bev_stream().fusion_mlps()) mlp.zero_output_layer();
    NoGradGuard guard;
    identical = identical && plain.forward(scene).values() == fused.forward(scene).values();
    const auto a = plain.detect(scene), b = fused.detect(scene);
    identical = identical && a.size() == b.size();
    for (std::size_t i = 0; identical && i < a.size(); ++i)
      identical = a[i].score == b[i].score && a[i].x == b[i].x && a[i].y == b[i].y && a[i].z == b[i].z &&
                  a[i].w == b[i].w && a[i].h == b[i].h && a[i].d == b[i].d && a[i].t == b[i].t &&
                  a[i].class_id == b[i].class_id;
    ++scenes;
    detections += a.size();
  }
  return {identical, std::to_string(scenes) + " scenes, " + std::to_string(detections) + " detections, " +
                         (identical ? "bit-identical" : "DIFFERENT")};
}

// ---- 6 ---------------------------------------------------------------------

Outcome ablation_direction() {
  ExperimentConfig c = load_experiment(kConfigs + "ablation.json", {});
  c.ablate.variants = {"bev_only", "continuous"};
  // The data premise: about half the objects are LIDAR-sparse yet marked in the image.
  std::size_t boxes = 0, sparse = 0, visible = 0;
  for (std::uint64_t s : c.ablate.seeds) {
    ExperimentConfig seeded = c;
    seeded.data.train_seed = c.data.train_seed + 1000 * s;
    for (const SceneSample& scene : training_scenes(seeded))
      for (const DetectionBox& b : scene.boxes) {
        ++boxes;
        sparse += points_in_box(scene.cloud, b) < 3;
        const auto uv = project(scene.camera.projection, {b.x, b.y, b.z});
        visible += uv && scene.image_features.at(0, static_cast<std::size_t>(std::lround(uv->second)),
                                                 static_cast<std::size_t>(std::lround(uv->first))) == 1.0;
      }
  }
  const Real sparse_share = static_cast<Real>(sparse) / static_cast<Real>(boxes);
  const bool premise = boxes > 0 && visible == boxes && sparse_share >= 0.4 && sparse_share <= 0.7;

  const auto dir = scratch("ablation");
  const Json r = ablate_run(c, dir);
  fs::remove_all(dir);
  std::map<std::string, Real> mean;
  std::map<std::string, std::string> seeds;
  for (const Json& row : r.at("rows")) {
    const std::string v = row.at("variant").get<std::string>();
    mean[v] = row.at("mean_ap").is_null() ? 0.0 : row.at("mean_ap").get<Real>();
    for (const Json& s : row.at("per_seed")) seeds[v] += " " + (s.at("ap").is_null() ? "-" : fmt(s.at("ap").get<Real>(), 3));
  }
  const bool ok = premise && mean["continuous"] > mean["bev_only"];
  return {ok, "sparse " + std::to_string(sparse) + "/" + std::to_string(boxes) + ", image-visible " +
                  std::to_string(visible) + "/" + std::to_string(boxes) + "; mean AP continuous " +
                  fmt(mean["continuous"], 3) + " [" + seeds["continuous"] + " ] vs bev_only " +
                  fmt(mean["bev_only"], 3) + " [" + seeds["bev_only"] + " ]"};
}

// ---- 7 ---------------------------------------------------------------------

// Dense scenes: every object draws several proposals of varying overlap and
// score, a random share goes undetected, and clutter adds unmatched boxes.
std::vector<FrameResult> dense_scenario(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_obj(5, 15), n_prop(1, 4);
  std::uniform_real_distribution<Real> u(0, 1), miss_rate(0, 0.2), jitter(-1.2, 1.2), clutter_rate(0.5, 2.0);
  const Real miss = miss_rate(rng), clutter = clutter_rate(rng);
  std::vector<FrameResult> frames(10);
  for (FrameResult& f : frames) {
    const int objects = n_obj(rng);
    for (int i = 0; i < objects; ++i) {
      DetectionBox gt;
      gt.x = 10.0 * i, gt.y = 0, gt.z = 0.8, gt.w = 4, gt.h = 2, gt.d = 1.5;
      f.ground_truth.push_back(gt);
      if (u(rng) < miss) continue;
      for (int k = n_prop(rng); k > 0; --k) {
        DetectionBox d = gt;
        d.x += jitter(rng), d.y += jitter(rng) / 2;
        d.score = u(rng);
        f.detections.push_back(d);
      }
    }
    for (int k = static_cast<int>(clutter * objects); k > 0; --k) {
      DetectionBox d;
      d.x = 10.0 * objects + 50 * u(rng), d.y = 20 * u(rng) - 10, d.z = 0.8, d.w = 4, d.h = 2, d.d = 1.5;
      d.score = 0.8 * u(rng);
      f.detections.push_back(d);
    }
    std::sort(f.detections.begin(), f.detections.end(),
              [](const DetectionBox& a, const DetectionBox& b) { return a.score > b.score; });
  }
  return frames;
}

Outcome ap_points_consistency() {
  std::mt19937_64 rng(1000);
  Real worst = 0, total = 0;
  const int trials = 200;
  EvalConfig eleven, hundred;
  hundred.ap_points = 100;
  for (int trial = 0; trial < trials; ++trial) {
    const auto frames = dense_scenario(rng);
    const Real a11 = *evaluate_class(frames, 0, eleven).ap, a100 = *evaluate_class(frames, 0, hundred).ap;
    worst = std::max(worst, std::abs(a11 - a100));
    total += std::abs(a11 - a100);
  }
  return {worst < kApPointsGap, std::to_string(trials) + " scenarios, max |AP11 - AP100| " + fmt(worst) + ", mean " +
                                    fmt(total / trials)};
}

// ---- 8 ---------------------------------------------------------------------

Outcome determinism() {
  const ExperimentConfig c = load_experiment(kConfigs + "tiny.json", {});
  const auto root = scratch("determinism");
  std::vector<std::string> mismatched;
  // Same run name under two roots: reports embed the run directory name.
  for (const char* copy : {"a", "b"}) {
    const fs::path run = root / copy / "run";
    train_run(c, run);
    eval_run(c, (run / "checkpoints" / "final.ckpt").string(), evaluation_scenes(c), run / "eval");
    // report.json records run paths as given, so both reports use the same relative one.
    const fs::path cwd = fs::current_path();
    fs::current_path(root / copy);
    report_run({"run"}, "report");
    fs::current_path(cwd);
  }
  const auto files = tree(root / "a");
  if (files != tree(root / "b")) mismatched.push_back("file set");
  for (const std::string& f : files)
    if (read_all(root / "a" / f) != read_all(root / "b" / f)) mismatched.push_back(f);
  // The ablation report too, on a short schedule.
  ExperimentConfig short_c = c;
  short_c.train.epochs = 2;
  ablate_run(short_c, root / "ablate_a");
  ablate_run(short_c, root / "ablate_b");
  if (read_all(root / "ablate_a" / "ablation.json") != read_all(root / "ablate_b" / "ablation.json"))
    mismatched.push_back("ablation.json");
  fs::remove_all(root);
  std::string detail = std::to_string(files.size() + 1) + " files compared";
  for (const auto& m : mismatched) detail += ", differs: " + m;
  return {mismatched.empty(), detail};
}

// ---- 9 ---------------------------------------------------------------------

// Type, truncation, occlusion, 3D dimensions, location, rotation and score.
bool stored_fields_stable(const std::string& a, const std::string& b) {
  std::istringstream la(a), lb(b);
  std::string x, y;
  while (std::getline(la, x)) {
    if (!std::getline(lb, y)) return false;
    std::istringstream ta(x), tb(y);
    const std::vector<std::string> fa{std::istream_iterator<std::string>(ta), {}}, fb{std::istream_iterator<std::string>(tb), {}};
    if (fa.size() != 16 || fb.size() != 16) return false;
    for (std::size_t i : {0u, 1u, 2u, 8u, 9u, 10u, 11u, 12u, 13u, 14u, 15u})
      if (fa[i] != fb[i]) return false;
  }
  return !std::getline(lb, y);
}

Outcome kitti_fidelity() {
  std::vector<std::string> problems;
  const PointCloud cloud = read_velodyne(kFixtures + "two_points.bin");
  const bool points = cloud.size() == 2 && cloud.points[0].x == 1.5 && cloud.points[0].y == -2.25 &&
                      cloud.points[0].z == 0.5 && cloud.intensity[0] == 0.25 && cloud.points[1].x == 10.0 &&
                      cloud.points[1].y == 3.5 && cloud.points[1].z == -1.75 && cloud.intensity[1] == 1.0;
  if (!points) problems.push_back("velodyne values");

  const KittiCalib axis = read_calib(kFixtures + "axis_calib.txt");
  const CalibratedCamera cam = axis.camera(80, 100);
  const auto uv = project(cam.projection, {20.0, 2.0, 1.0});
  if (!uv || uv->first != 100.0 * -2.0 / 20.0 + 50.0 || uv->second != 100.0 * -1.0 / 20.0 + 40.0)
    problems.push_back("calib projection");

  const auto labels = read_kitti_labels(kFixtures + "axis_labels.txt", axis);
  const bool label_ok = labels.size() == 4 && labels[0].class_id == 0 && !labels[0].ignore && labels[0].x == 20.0 &&
                        labels[0].y == -2.0 && labels[0].z == -(1.70 - 1.50 / 2) && labels[0].w == 3.90 &&
                        labels[0].h == 1.60 && labels[0].d == 1.50 && std::abs(labels[0].t + kPi / 2) <= 1e-15 &&
                        labels[0].image_height == 100.0 && labels[1].class_id == 1 && labels[1].x == 10.0 &&
                        labels[1].y == 3.0 && labels[2].ignore && labels[3].ignore;
  if (!label_ok) problems.push_back("label values");

  const KittiCalib calib = read_calib(kFixtures + "kitti_calib.txt");
  std::mt19937_64 rng(1100);
  std::uniform_real_distribution<Real> x(5, 40), y(-10, 10), z(-1.5, 0), size(0.5, 4.5), t(-3, 3), s(0, 1);
  std::uniform_int_distribution<int> cls(0, 2);
  std::vector<DetectionBox> boxes(200);
  for (DetectionBox& b : boxes) {
    b.x = x(rng), b.y = y(rng), b.z = z(rng), b.w = size(rng), b.h = size(rng), b.d = size(rng), b.t = t(rng);
    b.class_id = cls(rng), b.score = s(rng);
  }
  const std::string text = format_kitti_labels(boxes, calib);
  const auto back = parse_kitti_labels(text, calib);
  Real worst = 0;
  bool classes = back.size() == boxes.size();
  for (std::size_t i = 0; classes && i < boxes.size(); ++i) {
    const DetectionBox &a = boxes[i], &b = back[i];
    classes = a.class_id == b.class_id;
    const Real dt = std::remainder(a.t - b.t, 2 * kPi);
    worst = std::max({worst, std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(a.z - b.z), std::abs(a.w - b.w),
                      std::abs(a.h - b.h), std::abs(a.d - b.d), std::abs(dt)});
  }
  if (!classes) problems.push_back("round-trip classes");
  if (worst > kLabelPrecision) problems.push_back("round-trip values");
  // Once quantized, writing again reproduces the stored fields. Alpha and the
  // 2D box are re-derived from the quantized 3D box, so they may move.
  if (!stored_fields_stable(text, format_kitti_labels(back, calib))) problems.push_back("rewrite not stable");
  std::string detail = "fixtures " + std::string(points && label_ok ? "exact" : "MISMATCH") + ", " +
                       std::to_string(boxes.size()) + "-box round trip max error " + fmt(worst);
  for (const auto& p : problems) detail += ", " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient_suite", gradient_suite},
      {"oracle_equivalence", oracle_equivalence},
      {"encode_decode_round_trip", encode_decode_round_trip},
      {"overfit", overfit},
      {"zeroed_fusion_identity", zeroed_fusion_identity},
      {"ablation_direction", ablation_direction},
      {"ap_points_consistency", ap_points_consistency},
      {"determinism", determinism},
      {"kitti_fidelity", kitti_fidelity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
