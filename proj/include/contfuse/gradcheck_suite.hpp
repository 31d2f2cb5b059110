#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "contfuse/fusion.hpp"
#include "contfuse/gradcheck.hpp"
#include "contfuse/loss.hpp"
#include "contfuse/model.hpp"

namespace contfuse {

struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult()> run;
};

namespace detail::gc {

inline Tensor uniform(Shape shape, std::mt19937_64& rng, Real lo = -1.0, Real hi = 1.0) {
  std::uniform_real_distribution<Real> d(lo, hi);
  Tensor t(std::move(shape));
  for (Real& v : t.data()) v = d(rng);
  return t;
}

// Magnitudes in [0.1, 1] with random sign keep ReLU and clamp kinks outside the FD step.
inline Tensor off_kink(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> d(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(std::move(shape));
  for (Real& v : t.data()) v = sign(rng) ? d(rng) : -d(rng);
  return t;
}

inline Tensor readout(const Shape& shape, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return uniform(shape, rng);
}

inline Tensor dot(const Tensor& x, const Tensor& w) { return sum(mul(x, w)); }

inline void randomize_biases(const NamedTensors& named, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> d(-0.5, 0.5);
  for (const auto& [name, t] : named) {
    const std::string leaf = name.substr(name.rfind('.') + 1);
    if (leaf.starts_with("b"))  // conv ".b" and MLP ".b0", ".b1", ...
      for (Real& v : Tensor(t).data()) v = d(rng);
  }
}

inline std::vector<Tensor> mlp_params(const Mlp& mlp) {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    out.push_back(mlp.weight(l));
    out.push_back(mlp.bias(l));
  }
  return out;
}

inline void offset_biases(Mlp& mlp) {
  for (std::size_t l = 0; l < mlp.num_layers(); ++l)
    for (Real& b : mlp.bias(l).data()) b = 0.05 * static_cast<Real>(l + 1);
}

struct FusionScene {
  PointCloud cloud;
  CalibratedCamera cam;
  Tensor feats;
  BevGrid grid{{0, 4}, {-2, 2}, {-1, 3}, 4, 4, 2};
};

inline FusionScene fusion_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> dx(0.2, 3.8), dy(-1.8, 1.8), dz(-0.5, 2.0);
  FusionScene s;
  for (int i = 0; i < 6; ++i) s.cloud.points.push_back({dx(rng), dy(rng), dz(rng)});
  s.cam = {{4.0, -4.0, 0.1, 0.5, 3.0, 0.2, -3.0, 6.0, 1.0, 0.0, 0.0, 0.5}, 8, 10};
  s.feats = uniform({3, 8, 10}, rng);
  return s;
}

/// The miniature detector: 8×8 BEV grid, two groups per stream, four LIDAR points.
struct Miniature {
  ModelConfig cfg;
  SceneSample scene;
  std::vector<DetectionBox> gts;

  Miniature() {
    cfg.grid = BevGrid({0, 8}, {-4, 4}, {-1, 3}, 8, 8, 2);
    cfg.backbone.bev_groups = {{2, 3, 1}, {2, 4, 2}};
    cfg.backbone.image_groups = {{2, 3, 1}, {2, 4, 2}};
    cfg.backbone.fusion_groups = {0, 1};
    cfg.backbone.output_groups = 2;
    cfg.backbone.bev_fpn_channels = 3;
    cfg.backbone.image_fpn_channels = 2;
    cfg.fusion = {FusionMode::Continuous, 2, 10.0, true};
    cfg.image_channels = 1;
    cfg.anchors = {AnchorShape{2.0, 1.0, 1.0, 0.5, 4.0}};
    scene.cloud.points = {{2.2, -1.3, 0.4}, {3.7, 0.6, 1.1}, {5.1, 2.2, 0.2}, {6.4, -2.8, 0.9}};
    scene.camera = {{4, -4, 0, 3.5, 4, 0, -4, 8, 1, 0, 0, 0}, 8, 8};
    std::mt19937_64 rng(5);
    scene.image_features = uniform({1, 8, 8}, rng);
    DetectionBox b;
    b.x = 3.6, b.y = 0.7, b.z = 0.6, b.w = 2.2, b.h = 1.1, b.d = 1.2, b.t = 0.3;
    gts = {b};
  }
};

}  // namespace detail::gc

/// Finite-difference checks of every differentiable op and of the miniature
/// end-to-end model, each against a fixed random readout.
inline std::vector<GradCheckCase> gradcheck_suite(Real tolerance = 1e-4) {
  using namespace detail::gc;
  std::vector<GradCheckCase> cases;
  const GradCheckOptions opts{.tolerance = tolerance};
  auto add_case = [&](std::string name, std::function<GradCheckResult(const std::string&, GradCheckOptions)> fn) {
    cases.push_back({name, [name, fn, opts] { return fn(name, opts); }});
  };

  auto unary = [&](std::string name, std::function<Tensor(const Tensor&)> op) {
    add_case(name, [op](const std::string& n, GradCheckOptions o) {
      std::mt19937_64 rng(11);
      Tensor a = off_kink({3, 4}, rng);
      const Tensor w = readout(op(a).shape());
      return check_gradients(n, [&] { return dot(op(a), w); }, {a}, o);
    });
  };
  auto binary = [&](std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    add_case(name, [op](const std::string& n, GradCheckOptions o) {
      std::mt19937_64 rng(12);
      Tensor a = off_kink({3, 4}, rng), b = off_kink({3, 4}, rng);
      const Tensor w = readout({3, 4});
      return check_gradients(n, [&] { return dot(op(a, b), w); }, {a, b}, o);
    });
  };

  binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  unary("scale", [](const Tensor& a) { return scale(a, -1.7); });
  unary("add_scalar", [](const Tensor& a) { return mul(add_scalar(a, 0.4), a); });
  unary("relu", [](const Tensor& a) { return relu(a); });
  unary("sigmoid", [](const Tensor& a) { return sigmoid(a); });
  unary("log", [](const Tensor& a) { return log(add_scalar(mul(a, a), 0.1)); });
  unary("clamp", [](const Tensor& a) { return clamp(a, -0.55, 0.55); });
  unary("smooth_l1", [](const Tensor& a) { return smooth_l1(scale(a, 2.3)); });
  unary("reshape", [](const Tensor& a) { return reshape(a, {2, 6}); });
  unary("transpose", [](const Tensor& a) { return transpose(a); });
  add_case("sum_mean", [](const std::string& n, GradCheckOptions o) {
    std::mt19937_64 rng(13);
    Tensor a = off_kink({3, 4}, rng);
    return check_gradients(n, [&] { return add(sum(mul(a, a)), mean(mul(a, mul(a, a)))); }, {a}, o);
  });
  add_case("mul_scalar", [](const std::string& n, GradCheckOptions o) {
    std::mt19937_64 rng(14);
    Tensor a = off_kink({3, 4}, rng), s = off_kink({1}, rng);
    const Tensor w = readout({3, 4});
    return check_gradients(n, [&] { return dot(mul_scalar(a, s), w); }, {a, s}, o);
  });
  add_case("concat", [](const std::string& n, GradCheckOptions o) {
    std::mt19937_64 rng(15);
    Tensor a = uniform({3, 4}, rng), b = uniform({3, 2}, rng), c = uniform({2, 4}, rng);
    const Tensor w1 = readout({3, 6}), w0 = readout({5, 4}, 98);
    return check_gradients(n, [&] { return add(dot(concat({a, b}, 1), w1), dot(concat({a, c}, 0), w0)); },
                           {a, b, c}, o);
  });
  add_case("gather_scatter_rows", [](const std::string& n, GradCheckOptions o) {
    std::mt19937_64 rng(16);
    Tensor a = uniform({4, 3}, rng);
    const std::vector<std::size_t> gather{2, 0, 2, 3, 1}, scatter{1, 1, 0, 4, 2};
    const Tensor w = readout({5, 3});
    return check_gradients(n, [&] { return dot(scatter_add_rows(gather_rows(a, gather), scatter, 5), w); }, {a},
                           o);
  });
  add_case("matmul_bias", [](const std::string& n, GradCheckOptions o) {
    std::mt19937_64 rng(17);
    Tensor m = uniform({3, 4}, rng), k = uniform({4, 5}, rng), b = uniform({5}, rng);
    const Tensor w = readout({3, 5});
    return check_gradients(n, [&] { return dot(add_bias_rows(matmul(m, k), b), w); }, {m, k, b}, o);
  });
  for (std::size_t stride : {1u, 2u})
    add_case("conv2d_s" + std::to_string(stride), [stride](const std::string& n, GradCheckOptions o) {
      std::mt19937_64 rng(18);
      Tensor in = uniform({2, 5, 6}, rng), k = uniform({3, 2, 3, 3}, rng), b = uniform({3}, rng);
      const Tensor w = readout(conv2d(in, k, &b, stride, 1).shape());
      return check_gradients(n, [&] { return dot(conv2d(in, k, &b, stride, 1), w); }, {in, k, b}, o);
    });
  add_case("upsample_nearest2x", [](const std::string& n, GradCheckOptions o) {
    std::mt19937_64 rng(19);
    Tensor a = uniform({2, 3, 2}, rng);
    const Tensor w = readout({2, 6, 4});
    return check_gradients(n, [&] { return dot(upsample_nearest2x(a), w); }, {a}, o);
  });
  add_case("bilinear_gather", [](const std::string& n, GradCheckOptions o) {
    std::mt19937_64 rng(20);
    Tensor f = uniform({2, 5, 6}, rng);
    const std::vector<PixelCoord> pts{{0.3, 0.7, true}, {4.6, 3.2, true}, {-0.4, 1.5, true}, {2.5, 4.9, true},
                                      {1.0, 1.0, false}};
    const Tensor w = readout({5, 2});
    return check_gradients(n, [&] { return dot(bilinear_gather(f, pts), w); }, {f}, o);
  });
  add_case("mlp", [](const std::string& n, GradCheckOptions o) {
    std::mt19937_64 rng(21);
    Mlp mlp({4, 6, 3}, rng);
    offset_biases(mlp);
    const Tensor x = uniform({5, 4}, rng);
    const Tensor w = readout({5, 3});
    return check_gradients(n, [&] { return dot(mlp.forward(x), w); }, mlp_params(mlp), o);
  });
  for (bool knn : {true, false})
    add_case(knn ? "continuous_fusion" : "discrete_fusion", [knn](const std::string& n, GradCheckOptions o) {
      FusionScene s = fusion_scene(7);
      const FusionConfig cfg{2, 10.0, knn, knn, 3, 2, 1.0};
      std::mt19937_64 rng(8);
      Mlp mlp = make_fusion_mlp(cfg, rng);
      offset_biases(mlp);
      const FusionContext ctx(s.cloud, s.cam);
      std::vector<Tensor> inputs = mlp_params(mlp);
      inputs.push_back(s.feats);
      const Tensor w = readout({2, 4, 4});
      return check_gradients(n, [&] { return dot(fusion_forward(s.feats, ctx, s.grid, cfg, mlp), w); }, inputs, o);
    });
  add_case("parametric_continuous_conv", [](const std::string& n, GradCheckOptions o) {
    FusionScene s = fusion_scene(9);
    std::mt19937_64 rng(10);
    Mlp mlp({3, 4, 2}, rng);
    offset_biases(mlp);
    Tensor f = uniform({s.cloud.size(), 2}, rng);
    const std::vector<Point3> queries{{1.0, 0.5, 0.0}, {3.0, -1.0, 0.5}, {2.0, 1.5, 0.2}};
    std::vector<Tensor> inputs = mlp_params(mlp);
    inputs.push_back(f);
    const Tensor w = readout({3, 2});
    return check_gradients(n, [&] { return dot(parametric_continuous_conv(s.cloud, f, queries, 3, mlp), w); },
                           inputs, o);
  });
  add_case("classification_loss", [](const std::string& n, GradCheckOptions o) {
    std::mt19937_64 rng(22);
    Tensor logits = uniform({6}, rng, -2, 2);
    const std::vector<Real> labels{1, 0, 0, 1, 0, 1};
    return check_gradients(n, [&] { return classification_loss(sigmoid(logits), labels); }, {logits}, o);
  });
  add_case("regression_loss", [](const std::string& n, GradCheckOptions o) {
    std::mt19937_64 rng(23);
    Tensor pred = uniform({4, 5}, rng, -2, 2);
    const Tensor target = uniform({4, 5}, rng, -2, 2);
    return check_gradients(n, [&] { return regression_loss(pred, target, {true, false, true, true}); }, {pred}, o);
  });
  add_case("miniature_end_to_end", [](const std::string& n, GradCheckOptions o) {
    const Miniature m;
    const Detector model(m.cfg, 21);
    std::mt19937_64 rng(24);
    const NamedTensors named = model.named_parameters();
    randomize_biases(named, rng);
    LossConfig loss;
    loss.assignment.neg_sample_fraction = 1.0;
    loss.assignment.topk_min = std::size_t{1} << 20;  // every negative, so mining cannot switch under FD
    std::vector<Tensor> inputs;
    for (const auto& [name, t] : named) inputs.push_back(t);
    inputs.push_back(m.scene.image_features);
    o.step = 1e-6;
    o.directions = 16;
    return check_gradients(
        n, [&] { return detection_loss(model.forward(m.scene), model.anchors(), m.gts, loss, 3).total; }, inputs, o);
  });
  return cases;
}

}  // namespace contfuse
