#pragma once

// Experiment configuration as one strict JSON document.
//
// Every key is optional and falls back to the library default; unknown keys and
// wrong types are errors reported with their JSON path. Environment variables
// named CONTFUSE_<KEY>__<KEY>... override single values before parsing, e.g.
// CONTFUSE_TRAIN__OPTIMIZER__LR=0.0005. Override values are read as JSON when they
// parse as JSON and as plain strings otherwise.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "contfuse/eval.hpp"
#include "contfuse/kitti.hpp"
#include "contfuse/model.hpp"
#include "contfuse/synthetic.hpp"
#include "contfuse/train.hpp"

extern char** environ;

namespace contfuse {

using Json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kEnvPrefix = "CONTFUSE_";

enum class DataSource { Synthetic, Dataset, Kitti };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  SceneGenConfig synthetic;
  std::size_t train_scenes = 8;
  std::uint64_t train_seed = 1000;
  std::size_t eval_scenes = 0;  // 0 evaluates on the training scenes
  std::uint64_t eval_seed = 2000;
  std::string dataset_dir;  // written by write_dataset
  std::string kitti_root;   // holds velodyne/, calib/ and label_2/
  std::vector<std::string> kitti_frames;
  KittiImageSize kitti_image;
  std::vector<std::string> class_names{"Car"};
};

struct EvalSettings {
  IouKind iou_kind = IouKind::Bev;
  std::vector<Real> iou_thresholds{0.5, 0.7};
  std::vector<std::size_t> ap_points{11, 100};
  std::vector<RangeBin> range_bins;

  EvalConfig at(Real threshold, std::size_t points) const {
    EvalConfig c;
    c.iou_kind = iou_kind;
    c.iou_threshold = threshold;
    c.ap_points = points;
    c.range_bins = range_bins;
    return c;
  }
  EvalConfig primary() const { return at(iou_thresholds.front(), ap_points.front()); }
};

inline const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> names{"bev_only", "discrete", "continuous_no_geo", "continuous"};
  return names;
}

struct AblationSettings {
  std::vector<std::string> variants = ablation_variant_names();
  std::vector<std::size_t> k{1};
  std::vector<Real> max_dist{10.0};
  std::vector<std::uint64_t> seeds{0};
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalSettings eval;
  AblationSettings ablate;

  /// Loss settings follow the model's box variant and encoding.
  LossConfig loss() const {
    LossConfig l = train.loss;
    l.variant = model.variant;
    l.encoding = model.encoding;
    return l;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.loss = loss();
    return t;
  }

  void validate() const {
    model.validate();
    train.validate();
    data.synthetic.validate();
    if (data.class_names.size() != model.anchors.size())
      throw ConfigError("data.class_names has " + std::to_string(data.class_names.size()) +
                        " entries but model.anchors has " + std::to_string(model.anchors.size()));
    if (data.source == DataSource::Synthetic) {
      if (data.synthetic.classes.size() > model.anchors.size())
        throw ConfigError("data.synthetic.classes has more classes than model.anchors");
      if (data.synthetic.image_channels != model.image_channels)
        throw ConfigError("data.synthetic.image_channels must equal model.image_channels");
    }
    if (data.source == DataSource::Dataset && data.dataset_dir.empty())
      throw ConfigError("data.dataset_dir is required for source \"dataset\"");
    if (data.source == DataSource::Kitti && (data.kitti_root.empty() || model.image_channels != 1))
      throw ConfigError("source \"kitti\" needs data.kitti_root and model.image_channels = 1");
    if (eval.iou_thresholds.empty() || eval.ap_points.empty())
      throw ConfigError("eval needs at least one iou threshold and one ap_points value");
    for (Real t : eval.iou_thresholds)
      for (std::size_t p : eval.ap_points) eval.at(t, p).validate();
    for (const std::string& v : ablate.variants)
      if (std::find(ablation_variant_names().begin(), ablation_variant_names().end(), v) ==
          ablation_variant_names().end())
        throw ConfigError("ablate.variants: unknown variant \"" + v + "\"");
    if (ablate.variants.empty() || ablate.k.empty() || ablate.max_dist.empty() || ablate.seeds.empty())
      throw ConfigError("ablate: variants, k, max_dist and seeds must be non-empty");
  }
};

namespace detail::cfg {

template <class E>
struct EnumNames;
template <>
struct EnumNames<FusionMode> {
  static constexpr std::pair<FusionMode, const char*> table[] = {
      {FusionMode::None, "none"}, {FusionMode::Discrete, "discrete"}, {FusionMode::Continuous, "continuous"}};
};
template <>
struct EnumNames<BoxVariant> {
  static constexpr std::pair<BoxVariant, const char*> table[] = {
      {BoxVariant::Bev, "bev"}, {BoxVariant::Full3d, "full3d"}, {BoxVariant::Kitti3d, "kitti3d"}};
};
template <>
struct EnumNames<CenterNormalizer> {
  static constexpr std::pair<CenterNormalizer, const char*> table[] = {
      {CenterNormalizer::AnchorCoordinate, "coordinate"}, {CenterNormalizer::AnchorDiagonal, "diagonal"}};
};
template <>
struct EnumNames<IouKind> {
  static constexpr std::pair<IouKind, const char*> table[] = {{IouKind::Bev, "bev"}, {IouKind::Full3d, "3d"}};
};
template <>
struct EnumNames<DataSource> {
  static constexpr std::pair<DataSource, const char*> table[] = {
      {DataSource::Synthetic, "synthetic"}, {DataSource::Dataset, "dataset"}, {DataSource::Kitti, "kitti"}};
};

template <class E>
std::string enum_name(E e) {
  for (const auto& [v, n] : EnumNames<E>::table)
    if (v == e) return n;
  return "?";
}

/// Reads the fields of one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  template <class T>
  Reader& get(const char* key, T& out) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) read(*it, out, child(key));
    return *this;
  }

  template <class E>
  Reader& get_enum(const char* key, E& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    if (!it->is_string()) throw ConfigError(child(key) + ": expected a string");
    const std::string s = it->template get<std::string>();
    for (const auto& [v, n] : EnumNames<E>::table)
      if (s == n) {
        out = v;
        return *this;
      }
    std::string allowed;
    for (const auto& [v, n] : EnumNames<E>::table) allowed += std::string(allowed.empty() ? "" : ", ") + n;
    throw ConfigError(child(key) + ": \"" + s + "\" is not one of " + allowed);
  }

  /// Nested object, parsed by `fn` with its own strict reader.
  Reader& object(const char* key, const std::function<void(Reader&)>& fn) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) {
      Reader sub(*it, child(key));
      fn(sub);
      sub.finish();
    }
    return *this;
  }

  /// Array of objects; `fn` receives each element's reader and index. The array
  /// replaces the default entirely, so `reset(n)` runs first with its length.
  Reader& objects(const char* key, const std::function<void(std::size_t)>& reset,
                  const std::function<void(Reader&, std::size_t)>& fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    if (!it->is_array()) throw ConfigError(child(key) + ": expected an array");
    reset(it->size());
    for (std::size_t i = 0; i < it->size(); ++i) {
      Reader sub((*it)[i], child(key) + "[" + std::to_string(i) + "]");
      fn(sub, i);
      sub.finish();
    }
    return *this;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(child(it.key()) + ": unknown key");
  }

 private:
  static void read(const Json& v, bool& out, const std::string& p) {
    if (!v.is_boolean()) throw ConfigError(p + ": expected a boolean");
    out = v.get<bool>();
  }
  static void read(const Json& v, Real& out, const std::string& p) {
    if (!v.is_number()) throw ConfigError(p + ": expected a number");
    out = v.get<Real>();
  }
  static void read(const Json& v, std::uint64_t& out, const std::string& p) {
    if (!v.is_number_unsigned()) throw ConfigError(p + ": expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void read(const Json& v, int& out, const std::string& p) {
    if (!v.is_number_integer()) throw ConfigError(p + ": expected an integer");
    out = v.get<int>();
  }
  static void read(const Json& v, std::string& out, const std::string& p) {
    if (!v.is_string()) throw ConfigError(p + ": expected a string");
    out = v.get<std::string>();
  }
  static void read(const Json& v, Interval& out, const std::string& p) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ConfigError(p + ": expected [min, max]");
    out = {v[0].get<Real>(), v[1].get<Real>()};
  }
  template <class T>
  static void read(const Json& v, std::vector<T>& out, const std::string& p) {
    if (!v.is_array()) throw ConfigError(p + ": expected an array");
    out.assign(v.size(), T{});
    for (std::size_t i = 0; i < v.size(); ++i) read(v[i], out[i], p + "[" + std::to_string(i) + "]");
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Json interval_json(const Interval& i) { return Json::array({i.min, i.max}); }

}  // namespace detail::cfg

// ---- JSON → config -------------------------------------------------------

inline ExperimentConfig experiment_from_json(const Json& doc) {
  using detail::cfg::Reader;
  ExperimentConfig c;
  Reader root(doc, "");
  int version = kConfigSchemaVersion;
  root.get("schema_version", version);
  if (version != kConfigSchemaVersion)
    throw ConfigError("schema_version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  root.get("name", c.name).get("seed", c.seed);

  root.object("model", [&](Reader& m) {
    ModelConfig& mc = c.model;
    m.object("grid", [&](Reader& g) {
      Interval x = mc.grid.x_range(), y = mc.grid.y_range(), z = mc.grid.z_range();
      std::uint64_t nx = mc.grid.nx(), ny = mc.grid.ny(), nz = mc.grid.nz();
      g.get("x", x).get("y", y).get("z", z).get("nx", nx).get("ny", ny).get("nz", nz);
      try {
        mc.grid = BevGrid(x, y, z, nx, ny, nz);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(g.where() + ": " + e.what());
      }
    });
    m.object("backbone", [&](Reader& b) {
      BackboneConfig& bc = mc.backbone;
      for (auto [key, groups] : {std::pair{"bev_groups", &bc.bev_groups}, std::pair{"image_groups", &bc.image_groups}})
        b.objects(
            key, [g = groups](std::size_t n) { g->assign(n, GroupSpec{}); },
            [g = groups](Reader& r, std::size_t i) {
              GroupSpec& s = (*g)[i];
              std::uint64_t layers = s.layers, channels = s.channels, stride = s.stride;
              r.get("layers", layers).get("channels", channels).get("stride", stride);
              s = {layers, channels, stride};
            });
      std::vector<std::uint64_t> fusion_groups(bc.fusion_groups.begin(), bc.fusion_groups.end());
      std::uint64_t output_groups = bc.output_groups, bev_fpn = bc.bev_fpn_channels, image_fpn = bc.image_fpn_channels;
      b.get("fusion_groups", fusion_groups)
          .get("output_groups", output_groups)
          .get("bev_fpn_channels", bev_fpn)
          .get("image_fpn_channels", image_fpn);
      bc.fusion_groups.assign(fusion_groups.begin(), fusion_groups.end());
      bc.output_groups = output_groups;
      bc.bev_fpn_channels = bev_fpn;
      bc.image_fpn_channels = image_fpn;
    });
    m.object("fusion", [&](Reader& f) {
      std::uint64_t k = mc.fusion.k;
      f.get_enum("mode", mc.fusion.mode)
          .get("k", k)
          .get("max_dist", mc.fusion.max_dist)
          .get("use_geometric_feature", mc.fusion.use_geometric_feature);
      mc.fusion.k = k;
    });
    std::uint64_t image_channels = mc.image_channels;
    m.get("image_channels", image_channels);
    mc.image_channels = image_channels;
    m.objects(
        "anchors", [&](std::size_t n) { mc.anchors.assign(n, AnchorShape{}); },
        [&](Reader& r, std::size_t i) {
          AnchorShape& a = mc.anchors[i];
          r.get("w", a.w).get("h", a.h).get("d", a.d).get("z", a.z).get("image_height", a.image_height);
        });
    m.get("orientations", mc.orientations).get_enum("variant", mc.variant);
    m.object("encoding", [&](Reader& e) {
      e.get_enum("center", mc.encoding.center)
          .get("epsilon", mc.encoding.epsilon)
          .get("wrap_orientation", mc.encoding.wrap_orientation);
    });
    m.object("nms", [&](Reader& n) {
      n.get("iou_threshold", mc.nms.iou_threshold).get("score_threshold", mc.nms.score_threshold);
      std::uint64_t max_out = 0;
      n.get("max_out", max_out);  // 0 or absent: unlimited
      mc.nms.max_out = max_out == 0 ? std::numeric_limits<std::size_t>::max() : max_out;
    });
  });

  root.object("train", [&](Reader& t) {
    TrainConfig& tc = c.train;
    std::uint64_t epochs = tc.epochs, batch = tc.batch_size, every = tc.checkpoint_every;
    t.get("epochs", epochs).get("batch_size", batch).get("checkpoint_every", every);
    tc.epochs = epochs;
    tc.batch_size = batch;
    tc.checkpoint_every = every;
    t.get("shuffle", tc.shuffle).get("augment", tc.augment);
    t.object("augmentation", [&](Reader& a) {
      AugmentationConfig& ac = tc.augmentation;
      a.get("scale_min", ac.scale_min)
          .get("scale_max", ac.scale_max)
          .get("translate_xy", ac.translate_xy)
          .get("translate_z", ac.translate_z)
          .get("rotate_deg", ac.rotate_deg)
          .get("image_scale_min", ac.image_scale_min)
          .get("image_scale_max", ac.image_scale_max)
          .get("image_translate_px", ac.image_translate_px);
    });
    t.object("loss", [&](Reader& l) {
      LossConfig& lc = tc.loss;
      l.get("alpha", lc.alpha).get("clamp_eps", lc.clamp_eps);
      l.object("assignment", [&](Reader& a) {
        AssignmentConfig& as = lc.assignment;
        std::uint64_t per_pos = as.topk_per_positive, kmin = as.topk_min;
        a.get("positive_radius", as.positive_radius)
            .get("negative_radius", as.negative_radius)
            .get("neg_sample_fraction", as.neg_sample_fraction)
            .get("topk_per_positive", per_pos)
            .get("topk_min", kmin);
        as.topk_per_positive = per_pos;
        as.topk_min = kmin;
      });
    });
    t.object("optimizer", [&](Reader& o) {
      OptimizerConfig& oc = tc.optimizer;
      o.get("lr", oc.lr)
          .get("beta1", oc.beta1)
          .get("beta2", oc.beta2)
          .get("eps", oc.eps)
          .get("weight_decay", oc.weight_decay)
          .get("decay_at", oc.decay_at)
          .get("decay_factor", oc.decay_factor);
    });
  });

  root.object("data", [&](Reader& d) {
    DataConfig& dc = c.data;
    std::uint64_t train_n = dc.train_scenes, eval_n = dc.eval_scenes;
    d.get_enum("source", dc.source)
        .get("train_scenes", train_n)
        .get("train_seed", dc.train_seed)
        .get("eval_scenes", eval_n)
        .get("eval_seed", dc.eval_seed)
        .get("dataset_dir", dc.dataset_dir)
        .get("kitti_root", dc.kitti_root)
        .get("kitti_frames", dc.kitti_frames)
        .get("class_names", dc.class_names);
    dc.train_scenes = train_n;
    dc.eval_scenes = eval_n;
    d.object("kitti_image", [&](Reader& k) {
      std::uint64_t h = dc.kitti_image.height, w = dc.kitti_image.width;
      k.get("height", h).get("width", w);
      dc.kitti_image = {h, w};
    });
    d.object("synthetic", [&](Reader& s) {
      SceneGenConfig& sc = dc.synthetic;
      std::uint64_t min_o = sc.min_objects, max_o = sc.max_objects, rays = sc.ground_rays,
                    occ_max = sc.occluded_max_points, ih = sc.image_height, iw = sc.image_width,
                    ic = sc.image_channels, retries = sc.max_retries;
      s.get("place_x", sc.place_x)
          .get("place_y", sc.place_y)
          .get("min_objects", min_o)
          .get("max_objects", max_o)
          .get("min_gap", sc.min_gap)
          .get("ground_rays", rays)
          .get("ground_range", sc.ground_range)
          .get("object_density", sc.object_density)
          .get("sensor_height", sc.sensor_height)
          .get("surface_noise", sc.surface_noise)
          .get("occlusion_fraction", sc.occlusion_fraction)
          .get("occluded_max_points", occ_max)
          .get("image_height", ih)
          .get("image_width", iw)
          .get("image_channels", ic)
          .get("focal", sc.focal)
          .get("principal_row", sc.principal_row)
          .get("camera_height", sc.camera_height)
          .get("image_noise", sc.image_noise)
          .get("max_retries", retries);
      sc.min_objects = min_o;
      sc.max_objects = max_o;
      sc.ground_rays = rays;
      sc.occluded_max_points = occ_max;
      sc.image_height = ih;
      sc.image_width = iw;
      sc.image_channels = ic;
      sc.max_retries = retries;
      s.objects(
          "classes", [&](std::size_t n) { sc.classes.assign(n, ClassPrior{}); },
          [&](Reader& r, std::size_t i) {
            ClassPrior& p = sc.classes[i];
            r.get("w", p.w).get("h", p.h).get("d", p.d).get("jitter", p.jitter);
          });
    });
  });

  root.object("eval", [&](Reader& e) {
    EvalSettings& es = c.eval;
    std::vector<std::uint64_t> points(es.ap_points.begin(), es.ap_points.end());
    e.get_enum("iou_kind", es.iou_kind).get("iou_thresholds", es.iou_thresholds).get("ap_points", points);
    es.ap_points.assign(points.begin(), points.end());
    e.objects(
        "range_bins", [&](std::size_t n) { es.range_bins.assign(n, RangeBin{}); },
        [&](Reader& r, std::size_t i) { r.get("x_min", es.range_bins[i].x_min).get("x_max", es.range_bins[i].x_max); });
  });

  root.object("ablate", [&](Reader& a) {
    AblationSettings& as = c.ablate;
    std::vector<std::uint64_t> k(as.k.begin(), as.k.end());
    a.get("variants", as.variants).get("k", k).get("max_dist", as.max_dist).get("seeds", as.seeds);
    as.k.assign(k.begin(), k.end());
  });

  root.finish();
  c.validate();
  return c;
}

// ---- config → JSON -------------------------------------------------------

inline Json experiment_to_json(const ExperimentConfig& c) {
  using detail::cfg::enum_name;
  using detail::cfg::interval_json;
  const ModelConfig& m = c.model;
  auto groups = [](const std::vector<GroupSpec>& gs) {
    Json a = Json::array();
    for (const GroupSpec& g : gs) a.push_back({{"layers", g.layers}, {"channels", g.channels}, {"stride", g.stride}});
    return a;
  };
  Json anchors = Json::array();
  for (const AnchorShape& a : m.anchors)
    anchors.push_back({{"w", a.w}, {"h", a.h}, {"d", a.d}, {"z", a.z}, {"image_height", a.image_height}});
  Json model = {
      {"grid",
       {{"x", interval_json(m.grid.x_range())},
        {"y", interval_json(m.grid.y_range())},
        {"z", interval_json(m.grid.z_range())},
        {"nx", m.grid.nx()},
        {"ny", m.grid.ny()},
        {"nz", m.grid.nz()}}},
      {"backbone",
       {{"bev_groups", groups(m.backbone.bev_groups)},
        {"image_groups", groups(m.backbone.image_groups)},
        {"fusion_groups", m.backbone.fusion_groups},
        {"output_groups", m.backbone.output_groups},
        {"bev_fpn_channels", m.backbone.bev_fpn_channels},
        {"image_fpn_channels", m.backbone.image_fpn_channels}}},
      {"fusion",
       {{"mode", enum_name(m.fusion.mode)},
        {"k", m.fusion.k},
        {"max_dist", m.fusion.max_dist},
        {"use_geometric_feature", m.fusion.use_geometric_feature}}},
      {"image_channels", m.image_channels},
      {"anchors", anchors},
      {"orientations", m.orientations},
      {"variant", enum_name(m.variant)},
      {"encoding",
       {{"center", enum_name(m.encoding.center)},
        {"epsilon", m.encoding.epsilon},
        {"wrap_orientation", m.encoding.wrap_orientation}}},
      {"nms",
       {{"iou_threshold", m.nms.iou_threshold},
        {"score_threshold", m.nms.score_threshold},
        {"max_out", m.nms.max_out == std::numeric_limits<std::size_t>::max() ? 0 : m.nms.max_out}}},
  };

  const TrainConfig& t = c.train;
  const AugmentationConfig& au = t.augmentation;
  const AssignmentConfig& as = t.loss.assignment;
  const OptimizerConfig& o = t.optimizer;
  Json train = {
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"checkpoint_every", t.checkpoint_every},
      {"shuffle", t.shuffle},
      {"augment", t.augment},
      {"augmentation",
       {{"scale_min", au.scale_min},
        {"scale_max", au.scale_max},
        {"translate_xy", au.translate_xy},
        {"translate_z", au.translate_z},
        {"rotate_deg", au.rotate_deg},
        {"image_scale_min", au.image_scale_min},
        {"image_scale_max", au.image_scale_max},
        {"image_translate_px", au.image_translate_px}}},
      {"loss",
       {{"alpha", t.loss.alpha},
        {"clamp_eps", t.loss.clamp_eps},
        {"assignment",
         {{"positive_radius", as.positive_radius},
          {"negative_radius", as.negative_radius},
          {"neg_sample_fraction", as.neg_sample_fraction},
          {"topk_per_positive", as.topk_per_positive},
          {"topk_min", as.topk_min}}}}},
      {"optimizer",
       {{"lr", o.lr},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"eps", o.eps},
        {"weight_decay", o.weight_decay},
        {"decay_at", o.decay_at},
        {"decay_factor", o.decay_factor}}},
  };

  const DataConfig& d = c.data;
  const SceneGenConfig& s = d.synthetic;
  Json classes = Json::array();
  for (const ClassPrior& p : s.classes) classes.push_back({{"w", p.w}, {"h", p.h}, {"d", p.d}, {"jitter", p.jitter}});
  Json data = {
      {"source", enum_name(d.source)},
      {"train_scenes", d.train_scenes},
      {"train_seed", d.train_seed},
      {"eval_scenes", d.eval_scenes},
      {"eval_seed", d.eval_seed},
      {"dataset_dir", d.dataset_dir},
      {"kitti_root", d.kitti_root},
      {"kitti_frames", d.kitti_frames},
      {"kitti_image", {{"height", d.kitti_image.height}, {"width", d.kitti_image.width}}},
      {"class_names", d.class_names},
      {"synthetic",
       {{"place_x", interval_json(s.place_x)},
        {"place_y", interval_json(s.place_y)},
        {"min_objects", s.min_objects},
        {"max_objects", s.max_objects},
        {"classes", classes},
        {"min_gap", s.min_gap},
        {"ground_rays", s.ground_rays},
        {"ground_range", interval_json(s.ground_range)},
        {"object_density", s.object_density},
        {"sensor_height", s.sensor_height},
        {"surface_noise", s.surface_noise},
        {"occlusion_fraction", s.occlusion_fraction},
        {"occluded_max_points", s.occluded_max_points},
        {"image_height", s.image_height},
        {"image_width", s.image_width},
        {"image_channels", s.image_channels},
        {"focal", s.focal},
        {"principal_row", s.principal_row},
        {"camera_height", s.camera_height},
        {"image_noise", s.image_noise},
        {"max_retries", s.max_retries}}},
  };

  Json bins = Json::array();
  for (const RangeBin& b : c.eval.range_bins) bins.push_back({{"x_min", b.x_min}, {"x_max", b.x_max}});
  Json eval = {{"iou_kind", enum_name(c.eval.iou_kind)},
               {"iou_thresholds", c.eval.iou_thresholds},
               {"ap_points", c.eval.ap_points},
               {"range_bins", bins}};
  Json ablate = {{"variants", c.ablate.variants},
                 {"k", c.ablate.k},
                 {"max_dist", c.ablate.max_dist},
                 {"seeds", c.ablate.seeds}};

  return {{"schema_version", kConfigSchemaVersion},
          {"name", c.name},
          {"seed", c.seed},
          {"model", model},
          {"train", train},
          {"data", data},
          {"eval", eval},
          {"ablate", ablate}};
}

// ---- environment overrides and file I/O ----------------------------------

/// Applies one override: `key` is the variable name without the prefix, with
/// "__" separating path segments; segments are matched case-insensitively.
inline void apply_override(Json& doc, const std::string& key, const std::string& value) {
  std::vector<std::string> path;
  for (std::size_t start = 0;;) {
    const std::size_t sep = key.find("__", start);
    std::string seg = key.substr(start, sep == std::string::npos ? std::string::npos : sep - start);
    std::transform(seg.begin(), seg.end(), seg.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (seg.empty()) throw ConfigError(std::string(kEnvPrefix) + key + ": empty path segment");
    path.push_back(seg);
    if (sep == std::string::npos) break;
    start = sep + 2;
  }
  Json* node = &doc;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object()) throw ConfigError(std::string(kEnvPrefix) + key + ": " + path[i] + " is not an object");
    node = &(*node)[path[i]];
    if (node->is_null()) *node = Json::object();
  }
  if (!node->is_object()) throw ConfigError(std::string(kEnvPrefix) + key + ": parent is not an object");
  Json parsed = Json::parse(value, nullptr, false);
  (*node)[path.back()] = parsed.is_discarded() ? Json(value) : parsed;
}

/// CONTFUSE_* variables from `env` (a null-terminated "K=V" array) in sorted order.
inline std::vector<std::pair<std::string, std::string>> env_overrides(char** env = environ) {
  std::vector<std::pair<std::string, std::string>> out;
  const std::string prefix = kEnvPrefix;
  for (char** e = env; e && *e; ++e) {
    const std::string kv = *e;
    if (kv.rfind(prefix, 0) != 0) continue;
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(kv.substr(prefix.size(), eq - prefix.size()), kv.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ": cannot open");
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// File (or the all-defaults document when `path` is empty) plus overrides.
inline ExperimentConfig load_experiment(const std::string& path,
                                        const std::vector<std::pair<std::string, std::string>>& overrides) {
  Json doc = path.empty() ? Json::object() : read_json_file(path);
  for (const auto& [k, v] : overrides) apply_override(doc, k, v);
  return experiment_from_json(doc);
}

inline std::string dump_experiment(const ExperimentConfig& c) { return experiment_to_json(c).dump(2) + "\n"; }

}  // namespace contfuse
