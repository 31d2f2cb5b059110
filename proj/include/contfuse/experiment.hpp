#pragma once

// Run-level operations behind the command-line tool: training runs, evaluation
// reports, ablation grids, the gradient-check suite, micro-benchmarks and
// plot-ready report tables. Every file written here is a pure function of the
// resolved config and seed, except bench output.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "contfuse/checkpoint.hpp"
#include "contfuse/config.hpp"
#include "contfuse/dataset.hpp"
#include "contfuse/gradcheck_suite.hpp"
#include "contfuse/knn.hpp"
#include "contfuse/synthetic.hpp"
#include "contfuse/train.hpp"

namespace contfuse {

namespace fs = std::filesystem;

/// Bad invocation or missing inputs; maps to exit code 2 like ConfigError.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail::run {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::string threshold_key(Real t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

inline Json optional_json(const std::optional<Real>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::string fmt(const std::optional<Real>& v, int digits = 4) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << *v;
  return s.str();
}

}  // namespace detail::run

// ---- data ---------------------------------------------------------------

inline std::vector<SceneSample> load_kitti_frames(const DataConfig& d) {
  const fs::path root = d.kitti_root;
  std::vector<SceneSample> out;
  for (const std::string& id : d.kitti_frames)
    out.push_back(load_kitti_frame((root / "velodyne" / (id + ".bin")).string(), (root / "calib" / (id + ".txt")).string(),
                                   (root / "label_2" / (id + ".txt")).string(), d.kitti_image,
                                   KittiClassMap{d.class_names}));
  return out;
}

inline std::vector<SceneSample> training_scenes(const ExperimentConfig& c) {
  switch (c.data.source) {
    case DataSource::Synthetic: return generate_scenes(c.data.synthetic, c.data.train_scenes, c.data.train_seed);
    case DataSource::Dataset: return read_dataset(c.data.dataset_dir);
    case DataSource::Kitti: return load_kitti_frames(c.data);
  }
  return {};
}

inline std::vector<SceneSample> evaluation_scenes(const ExperimentConfig& c) {
  if (c.data.source == DataSource::Synthetic && c.data.eval_scenes > 0)
    return generate_scenes(c.data.synthetic, c.data.eval_scenes, c.data.eval_seed);
  return training_scenes(c);
}

// ---- evaluation ---------------------------------------------------------

/// Per-class AP at every configured threshold and point count, the PR curve at
/// the primary setting, and piecewise range AP when range bins are configured.
inline Json evaluation_report(const std::vector<FrameResult>& frames, const ExperimentConfig& c) {
  using detail::run::optional_json;
  Json classes = Json::array();
  std::size_t detections = 0;
  for (const FrameResult& f : frames) detections += f.detections.size();
  for (std::size_t k = 0; k < c.data.class_names.size(); ++k) {
    const int cls = static_cast<int>(k);
    std::size_t num_gt = 0;
    for (const FrameResult& f : frames)
      for (const DetectionBox& g : f.ground_truth) num_gt += g.class_id == cls && !g.ignore;
    Json ap = Json::object();
    for (Real t : c.eval.iou_thresholds)
      for (std::size_t p : c.eval.ap_points)
        ap[detail::run::threshold_key(t)][std::to_string(p)] = optional_json(evaluate_class(frames, cls, c.eval.at(t, p)).ap);
    const EvalConfig primary = c.eval.primary();
    const PrCurve curve = evaluate_class(frames, cls, primary);
    Json range = Json::array();
    if (!primary.range_bins.empty())
      for (const auto& [bin, value] : piecewise_range_ap(frames, cls, primary))
        range.push_back({{"x_min", bin.x_min}, {"x_max", bin.x_max}, {"ap", optional_json(value)}});
    classes.push_back({{"id", k},
                       {"name", c.data.class_names[k]},
                       {"num_gt", num_gt},
                       {"ap", ap},
                       {"pr_curve", {{"recall", curve.recall}, {"precision", curve.precision}}},
                       {"range_ap", range}});
  }
  return {{"frames", frames.size()},
          {"detections", detections},
          {"iou_kind", detail::cfg::enum_name(c.eval.iou_kind)},
          {"primary", {{"iou_threshold", c.eval.iou_thresholds.front()}, {"ap_points", c.eval.ap_points.front()}}},
          {"classes", classes}};
}

/// AP of `report` at the primary setting averaged over classes that have one.
inline std::optional<Real> mean_primary_ap(const Json& report) {
  const Json& primary = report.at("primary");
  const std::string t = detail::run::threshold_key(primary.at("iou_threshold").get<Real>());
  const std::string p = std::to_string(primary.at("ap_points").get<std::size_t>());
  Real total = 0;
  std::size_t n = 0;
  for (const Json& cls : report.at("classes")) {
    const Json& v = cls.at("ap").at(t).at(p);
    if (v.is_null()) continue;
    total += v.get<Real>();
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<Real>(n);
}

inline std::string format_report_table(const Json& report) {
  std::ostringstream out;
  out << "class        iou   points  AP\n";
  for (const Json& cls : report.at("classes"))
    for (const auto& [t, per_points] : cls.at("ap").items()) {
      // Keys sort as strings; list point counts numerically.
      std::vector<std::pair<std::size_t, std::string>> points;
      for (const auto& [p, v] : per_points.items()) points.emplace_back(std::stoul(p), p);
      std::sort(points.begin(), points.end());
      for (const auto& [n, p] : points) {
        const Json& v = per_points.at(p);
        const std::optional<Real> ap = v.is_null() ? std::nullopt : std::optional<Real>(v.get<Real>());
        out << std::left << std::setw(12) << cls.at("name").get<std::string>() << " " << t << "  " << std::setw(6) << p
            << "  " << detail::run::fmt(ap) << "\n";
      }
    }
  return out.str();
}

// ---- training -----------------------------------------------------------

struct TrainRunResult {
  std::vector<StepRecord> log;
  Json metrics;
};

inline Json step_json(const StepRecord& r) {
  return {{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr},       {"loss", r.loss},
          {"loss_cls", r.loss_cls}, {"loss_reg", r.loss_reg}, {"n", r.n}, {"n_pos", r.n_pos}};
}

/// Trains from scratch and writes config.json, train_log.jsonl (one line per
/// step), checkpoints/ and metrics.json under `out`.
inline TrainRunResult train_run(const ExperimentConfig& c, const fs::path& out, std::ostream* progress = nullptr) {
  c.validate();
  fs::create_directories(out / "checkpoints");
  detail::run::write_text(out / "config.json", dump_experiment(c));
  const std::vector<SceneSample> scenes = training_scenes(c);
  if (scenes.empty()) throw UsageError("no training scenes");
  const Detector model(c.model, c.seed);

  std::ofstream log_file(out / "train_log.jsonl", std::ios::binary);
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    log_file << step_json(r).dump() << "\n";
    if (progress && (r.step % 10 == 0))
      *progress << "step " << r.step << " epoch " << r.epoch << " loss " << r.loss << " (cls " << r.loss_cls << ", reg "
                << r.loss_reg << ")\n";
  };
  hooks.on_epoch_end = [&](std::size_t epoch, bool last) {
    const std::size_t every = c.train.checkpoint_every;
    if (every > 0 && (epoch + 1) % every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch + 1);
      save_checkpoint((out / "checkpoints" / name).string(), model.named_parameters());
    }
    if (last) save_checkpoint((out / "checkpoints" / "final.ckpt").string(), model.named_parameters());
  };
  TrainRunResult result;
  result.log = train(model, scenes, c.train_config(), c.seed, hooks);
  log_file.close();

  const Json report = evaluation_report(run_detector(model, evaluation_scenes(c)), c);
  const Real initial = result.log.front().loss, final_loss = result.log.back().loss;
  result.metrics = {{"steps", result.log.size()},
                    {"initial_loss", initial},
                    {"final_loss", final_loss},
                    {"loss_ratio", final_loss / initial},
                    {"parameters", model.parameter_count()},
                    {"eval", report}};
  detail::run::write_text(out / "metrics.json", result.metrics.dump(2) + "\n");
  return result;
}

/// Loads `checkpoint` into a fresh model built from `c`.
inline Detector load_detector(const ExperimentConfig& c, const std::string& checkpoint) {
  Detector model(c.model, c.seed);
  restore_parameters(model.named_parameters(), load_checkpoint(checkpoint));
  return model;
}

/// Evaluates a checkpoint on `scenes` and writes eval_report.json under `out`.
inline Json eval_run(const ExperimentConfig& c, const std::string& checkpoint, const std::vector<SceneSample>& scenes,
                     const fs::path& out) {
  const Detector model = load_detector(c, checkpoint);
  const Json report = evaluation_report(run_detector(model, scenes), c);
  fs::create_directories(out);
  detail::run::write_text(out / "eval_report.json", report.dump(2) + "\n");
  return report;
}

// ---- ablation -----------------------------------------------------------

struct AblationVariant {
  std::string name;
  FusionSettings fusion;
  bool gridded = false;  // k and max_dist take effect
};

inline std::vector<AblationVariant> ablation_variants(const AblationSettings& a) {
  std::vector<AblationVariant> out;
  for (const std::string& v : a.variants) {
    if (v == "bev_only") {
      out.push_back({v, {FusionMode::None, 1, 10.0, true}, false});
    } else if (v == "discrete") {
      out.push_back({v, {FusionMode::Discrete, 1, 10.0, false}, false});
    } else {
      for (std::size_t k : a.k)
        for (Real d : a.max_dist) out.push_back({v, {FusionMode::Continuous, k, d, v == "continuous"}, true});
    }
  }
  return out;
}

/// Trains every variant on the same scenes and model seed per ablation seed and
/// reports training-set AP at the primary setting. Writes ablation.json under `out`.
inline Json ablate_run(const ExperimentConfig& c, const fs::path& out, std::ostream* progress = nullptr) {
  c.validate();
  const auto variants = ablation_variants(c.ablate);
  Json rows = Json::array();
  std::vector<std::vector<SceneSample>> scenes_per_seed;
  for (std::uint64_t s : c.ablate.seeds) {
    ExperimentConfig seeded = c;
    seeded.data.train_seed = c.data.train_seed + 1000 * s;
    scenes_per_seed.push_back(training_scenes(seeded));
  }
  for (const AblationVariant& v : variants) {
    Json per_seed = Json::array();
    Real total = 0;
    std::size_t counted = 0;
    for (std::size_t si = 0; si < c.ablate.seeds.size(); ++si) {
      ExperimentConfig vc = c;
      vc.model.fusion = v.fusion;
      vc.seed = c.seed + c.ablate.seeds[si];
      vc.validate();
      const Detector model(vc.model, vc.seed);
      const auto log = train(model, scenes_per_seed[si], vc.train_config(), vc.seed);
      const Json report = evaluation_report(run_detector(model, scenes_per_seed[si]), vc);
      const std::optional<Real> ap = mean_primary_ap(report);
      if (ap) {
        total += *ap;
        ++counted;
      }
      per_seed.push_back({{"seed", c.ablate.seeds[si]}, {"ap", detail::run::optional_json(ap)},
                          {"final_loss", log.back().loss}});
      if (progress)
        *progress << v.name << " k=" << v.fusion.k << " d=" << v.fusion.max_dist << " seed " << c.ablate.seeds[si]
                  << ": AP " << detail::run::fmt(ap) << "\n";
    }
    rows.push_back({{"variant", v.name},
                    {"k", v.gridded ? Json(v.fusion.k) : Json(nullptr)},
                    {"max_dist", v.gridded ? Json(v.fusion.max_dist) : Json(nullptr)},
                    {"fusion",
                     {{"mode", detail::cfg::enum_name(v.fusion.mode)},
                      {"k", v.fusion.k},
                      {"max_dist", v.fusion.max_dist},
                      {"use_geometric_feature", v.fusion.use_geometric_feature}}},
                    {"per_seed", per_seed},
                    {"mean_ap", counted ? Json(total / static_cast<Real>(counted)) : Json(nullptr)}});
  }
  const Json report = {{"metric", "training AP, IoU " + detail::run::threshold_key(c.eval.iou_thresholds.front()) +
                                      ", " + std::to_string(c.eval.ap_points.front()) + " points"},
                       {"rows", rows}};
  fs::create_directories(out);
  detail::run::write_text(out / "config.json", dump_experiment(c));
  detail::run::write_text(out / "ablation.json", report.dump(2) + "\n");
  return report;
}

inline std::string format_ablation_table(const Json& report) {
  std::ostringstream out;
  out << std::left << std::setw(20) << "variant" << std::setw(5) << "k" << std::setw(10) << "max_dist"
      << "mean AP\n";
  for (const Json& r : report.at("rows")) {
    const Json& mean = r.at("mean_ap");
    out << std::left << std::setw(20) << r.at("variant").get<std::string>() << std::setw(5)
        << (r.at("k").is_null() ? "-" : std::to_string(r.at("k").get<std::size_t>())) << std::setw(10)
        << (r.at("max_dist").is_null() ? std::string("-") : detail::run::fmt(r.at("max_dist").get<Real>(), 1))
        << detail::run::fmt(mean.is_null() ? std::nullopt : std::optional<Real>(mean.get<Real>())) << "\n";
  }
  return out.str();
}

// ---- gradient checks ----------------------------------------------------

struct GradCheckReport {
  std::vector<GradCheckResult> results;
  bool passed = true;
  Json to_json() const {
    Json rows = Json::array();
    for (const GradCheckResult& r : results)
      rows.push_back({{"op", r.name}, {"max_rel_error", r.max_rel_error}, {"passed", r.passed}});
    return {{"passed", passed}, {"results", rows}};
  }
};

inline GradCheckReport gradcheck_run(Real tolerance = 1e-4, std::ostream* progress = nullptr) {
  GradCheckReport rep;
  for (const GradCheckCase& c : gradcheck_suite(tolerance)) {
    const GradCheckResult r = c.run();
    rep.passed = rep.passed && r.passed;
    rep.results.push_back(r);
    if (progress)
      *progress << (r.passed ? "ok    " : "FAIL  ") << std::left << std::setw(28) << r.name << std::scientific
                << std::setprecision(2) << r.max_rel_error << std::defaultfloat << "\n";
  }
  return rep;
}

// ---- micro-benchmarks ---------------------------------------------------

struct BenchOptions {
  std::vector<std::size_t> point_counts{1000, 10000, 50000};
  std::vector<std::size_t> box_counts{100, 400, 1600};
  std::size_t repeats = 5;
  std::size_t queries = 200;
  std::uint64_t seed = 0;
};

namespace detail::run {

template <class F>
Real median_ms(std::size_t repeats, F&& fn) {
  std::vector<Real> times;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<Real, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

inline PointCloud random_cloud(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> x(0, 24), y(-12, 12), z(0, 2.5);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({x(rng), y(rng), z(rng)});
  return c;
}

}  // namespace detail::run

/// Median wall time in milliseconds per (op, size). Timing is machine-dependent.
inline Json bench_run(const BenchOptions& o, std::ostream* progress = nullptr) {
  using detail::run::median_ms;
  std::mt19937_64 rng(o.seed);
  Json rows = Json::array();
  auto row = [&](const std::string& op, std::size_t size, Real ms) {
    rows.push_back({{"op", op}, {"size", size}, {"median_ms", ms}, {"repeats", o.repeats}});
    if (progress)
      *progress << std::left << std::setw(22) << op << std::setw(8) << size << std::fixed << std::setprecision(3) << ms
                << " ms" << std::defaultfloat << "\n";
  };
  const BevGrid grid({0, 24}, {-12, 12}, {-0.5, 3.5}, 48, 48, 8);
  const CalibratedCamera cam = synthetic_camera(SceneGenConfig{});
  for (std::size_t n : o.point_counts) {
    const PointCloud cloud = detail::run::random_cloud(n, rng);
    std::vector<std::pair<Real, Real>> queries;
    std::uniform_real_distribution<Real> qx(0, 24), qy(-12, 12);
    for (std::size_t i = 0; i < o.queries; ++i) queries.emplace_back(qx(rng), qy(rng));
    const Real inf = std::numeric_limits<Real>::infinity();
    std::size_t sink = 0;
    row("knn_bev_index", n, median_ms(o.repeats, [&] {
          const BevIndex index(cloud);
          for (const auto& [x, y] : queries) sink += knn_bev(x, y, index, 3, inf).size();
        }));
    row("knn_bev_brute", n, median_ms(o.repeats, [&] {
          for (const auto& [x, y] : queries) sink += knn_bev_brute(x, y, cloud, 3, inf).size();
        }));
    row("voxelize", n, median_ms(o.repeats, [&] { sink += voxelize(cloud, grid).numel(); }));
    FusionConfig fc{1, 10.0, true, true, 4, 8, 1.0};
    std::mt19937_64 mrng(1);
    const Mlp mlp = make_fusion_mlp(fc, mrng);
    std::mt19937_64 frng(2);
    const Tensor feats = detail::gc::uniform({4, 32, 64}, frng);
    row("continuous_fusion", n, median_ms(o.repeats, [&] {
          NoGradGuard guard;
          const FusionContext ctx(cloud, cam);
          sink += continuous_fusion_forward(feats, ctx, grid, fc, mlp).numel();
        }));
    if (sink == 0) row("empty", n, 0);
  }
  for (std::size_t m : o.box_counts) {
    std::uniform_real_distribution<Real> x(0, 24), y(-12, 12), t(-3, 3), s(0, 1);
    std::vector<DetectionBox> boxes(m);
    for (DetectionBox& b : boxes) {
      b.x = x(rng), b.y = y(rng), b.t = t(rng), b.score = s(rng);
      b.w = 3.9, b.h = 1.6, b.d = 1.5;
    }
    NmsOptions opts;
    opts.score_threshold = 0.0;
    std::size_t kept = 0;
    row("nms", m, median_ms(o.repeats, [&] { kept += nms(boxes, opts).size(); }));
  }
  return {{"rows", rows}};
}

// ---- consolidated reports -------------------------------------------------

/// Reads each run directory (config.json, train_log.jsonl, metrics.json) and
/// writes loss_curves.tsv, pr_curves.tsv, range_ap.tsv and summary.tsv under
/// `out`, with runs ordered by id (the directory name).
inline Json report_run(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  if (run_dirs.empty()) throw UsageError("report: no run directories given");
  std::vector<std::pair<std::string, fs::path>> runs;
  for (const fs::path& d : run_dirs) {
    if (!fs::is_directory(d)) throw UsageError("report: run directory " + d.string() + " does not exist");
    for (const char* f : {"config.json", "train_log.jsonl", "metrics.json"})
      if (!fs::exists(d / f)) throw UsageError("report: " + (d / f).string() + " is missing");
    runs.emplace_back(fs::path(d).lexically_normal().filename().string(), d);
    if (runs.back().first.empty()) runs.back().first = fs::path(d).lexically_normal().parent_path().filename().string();
  }
  std::sort(runs.begin(), runs.end());

  std::ostringstream loss, pr, range, summary;
  loss << "run\tstep\tepoch\tloss\tloss_cls\tloss_reg\n";
  pr << "run\tclass\trank\trecall\tprecision\n";
  range << "run\tclass\tx_min\tx_max\tap\n";
  summary << "run\tclass\tiou\tpoints\tap\n";
  auto num = [](const Json& v) { return v.is_null() ? std::string("nan") : v.dump(); };
  Json index = Json::array();
  for (const auto& [id, dir] : runs) {
    std::istringstream log(detail::run::read_text(dir / "train_log.jsonl"));
    std::size_t steps = 0;
    for (std::string line; std::getline(log, line);) {
      if (line.empty()) continue;
      const Json r = Json::parse(line);
      loss << id << "\t" << r.at("step") << "\t" << r.at("epoch") << "\t" << num(r.at("loss")) << "\t"
           << num(r.at("loss_cls")) << "\t" << num(r.at("loss_reg")) << "\n";
      ++steps;
    }
    const Json metrics = Json::parse(detail::run::read_text(dir / "metrics.json"));
    for (const Json& cls : metrics.at("eval").at("classes")) {
      const std::string name = cls.at("name").get<std::string>();
      const Json& rec = cls.at("pr_curve").at("recall");
      const Json& prec = cls.at("pr_curve").at("precision");
      for (std::size_t i = 0; i < rec.size(); ++i)
        pr << id << "\t" << name << "\t" << i << "\t" << num(rec[i]) << "\t" << num(prec[i]) << "\n";
      for (const Json& b : cls.at("range_ap"))
        range << id << "\t" << name << "\t" << num(b.at("x_min")) << "\t" << num(b.at("x_max")) << "\t" << num(b.at("ap"))
              << "\n";
      for (const auto& [t, per_points] : cls.at("ap").items())
        for (const auto& [p, v] : per_points.items())
          summary << id << "\t" << name << "\t" << t << "\t" << p << "\t" << num(v) << "\n";
    }
    index.push_back({{"run", id}, {"path", dir.string()}, {"steps", steps}, {"final_loss", metrics.at("final_loss")}});
  }
  fs::create_directories(out);
  detail::run::write_text(out / "loss_curves.tsv", loss.str());
  detail::run::write_text(out / "pr_curves.tsv", pr.str());
  detail::run::write_text(out / "range_ap.tsv", range.str());
  detail::run::write_text(out / "summary.tsv", summary.str());
  const Json report = {{"runs", index}};
  detail::run::write_text(out / "report.json", report.dump(2) + "\n");
  return report;
}

}  // namespace contfuse
