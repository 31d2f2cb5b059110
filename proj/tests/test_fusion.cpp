#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "contfuse/fusion.hpp"
#include "contfuse/gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace contfuse;
using contfuse::testing::plain_mlp;
using contfuse::testing::plain_sample;
using contfuse::testing::loop_nest_fusion;
using contfuse::testing::random_tensor;

namespace {

constexpr Real kInf = std::numeric_limits<Real>::infinity();

// u = x, v = y, unit depth: an affine camera that makes projections easy to place.
CalibratedCamera planar_camera(std::size_t h, std::size_t w) {
  return {{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1}, h, w};
}

// Pixel centers at integer metric coordinates 0..n−1.
BevGrid integer_grid(std::size_t nx, std::size_t ny) {
  return BevGrid({-0.5, nx - 0.5}, {-0.5, ny - 0.5}, {-1, 3}, nx, ny, 2);
}

Tensor loop_nest_discrete(const Tensor& feats, const PointCloud& cloud, const CalibratedCamera& cam,
                          const BevGrid& g, const FusionConfig& cfg, const Mlp& mlp) {
  Tensor out({cfg.output_dim, g.ny(), g.nx()}, 0.0);
  for (const Point3& p : cloud.points) {
    const Real cx = (p.x - g.x_range().min) / g.cell_x(), cy = (p.y - g.y_range().min) / g.cell_y();
    if (cx < 0 || cy < 0 || p.x >= g.x_range().max || p.y >= g.y_range().max) continue;
    const auto col = static_cast<std::size_t>(cx), row = static_cast<std::size_t>(cy);
    const Projection pr = project_point(p, cam);
    if (!pr.valid) continue;
    const auto h = plain_mlp(mlp, plain_sample(feats, pr.u, pr.v, true));
    for (std::size_t o = 0; o < h.size(); ++o) out.at(o, row, col) += h[o];
  }
  return out;
}

struct TinyScene {
  PointCloud cloud;
  CalibratedCamera cam;
  Tensor feats;
  BevGrid grid{{0, 4}, {-2, 2}, {-1, 3}, 4, 4, 2};
};

TinyScene tiny_scene(std::uint64_t seed, std::size_t npts = 5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> dx(0.2, 3.8), dy(-1.8, 1.8), dz(-0.5, 2.0), dp(-0.3, 0.3);
  TinyScene s;
  for (std::size_t i = 0; i < npts; ++i) s.cloud.points.push_back({dx(rng), dy(rng), dz(rng)});
  // Perspective in x with a perturbed matrix; some points land off-image.
  s.cam = {{4.0, -4.0 + dp(rng), dp(rng), 0.5, 3.0, 0.2 + dp(rng), -3.0, 6.0, 1.0, 0.0, 0.0, 0.5}, 8, 10};
  s.feats = random_tensor({3, 8, 10}, rng);
  return s;
}

}  // namespace

TEST(ContinuousFusion, PassThroughConstruction) {
  const std::size_t c = 2;
  FusionConfig cfg{1, 10.0, true, true, c, c, 1.0};
  std::mt19937_64 rng(0);
  Mlp mlp = make_fusion_mlp(cfg, rng);
  // Identity on the feature part, zero on the offset part, positive features survive ReLU.
  for (std::size_t l = 0; l < 3; ++l) {
    Tensor& w = mlp.weight(l);
    for (Real& v : w.data()) v = 0.0;
    for (std::size_t i = 0; i < c; ++i) w[i * w.dim(1) + i] = 1.0;
    for (Real& v : mlp.bias(l).data()) v = 0.0;
  }
  std::mt19937_64 frng(3);
  const Tensor feats = random_tensor({c, 6, 6}, frng, 0.1, 1.0);
  const PointCloud cloud{{{2.0, 3.0, 0.7}}, {}};
  const FusionContext ctx(cloud, planar_camera(6, 6));
  const BevGrid g = integer_grid(6, 6);
  const Tensor out = continuous_fusion_forward(feats, ctx, g, cfg, mlp);
  for (std::size_t ch = 0; ch < c; ++ch) EXPECT_DOUBLE_EQ(out.at(ch, 3, 2), feats.at(ch, 3, 2));
}

TEST(ContinuousFusion, EmptyCloudGivesZeros) {
  FusionConfig cfg{1, kInf, true, true, 3, 4, 1.0};
  std::mt19937_64 rng(0);
  const Mlp mlp = make_fusion_mlp(cfg, rng);
  const PointCloud cloud;
  const FusionContext ctx(cloud, planar_camera(4, 4));
  const Tensor out = continuous_fusion_forward(Tensor({3, 4, 4}, 1.0), ctx, integer_grid(3, 5), cfg, mlp);
  EXPECT_EQ(out.shape(), (Shape{4, 5, 3}));
  for (Real v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(ContinuousFusion, MatchesLoopNestOracle) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const TinyScene s = tiny_scene(seed);
    for (bool geom : {true, false})
      for (Real d : {kInf, 1.5}) {
        FusionConfig cfg{2, d, geom, true, 3, 4, 1.0};
        std::mt19937_64 rng(seed + 100);
        const Mlp mlp = make_fusion_mlp(cfg, rng);
        const FusionContext ctx(s.cloud, s.cam);
        const Tensor got = continuous_fusion_forward(s.feats, ctx, s.grid, cfg, mlp);
        const Tensor ref = loop_nest_fusion(s.feats, s.cloud, s.cam, s.grid, cfg, mlp);
        for (std::size_t i = 0; i < ref.numel(); ++i) ASSERT_NEAR(got[i], ref[i], 1e-10) << seed;
      }
  }
}

TEST(ContinuousFusion, InvalidProjectionHandling) {
  FusionConfig cfg{1, kInf, true, true, 1, 1, 1.0};
  std::mt19937_64 rng(5);
  Mlp mlp = make_fusion_mlp(cfg, rng);
  for (Real& v : mlp.bias(2).data()) v = 0.25;
  const PointCloud cloud{{{1.0, 1.0, 0.5}}, {}};
  CalibratedCamera behind = planar_camera(4, 4);
  behind.projection[11] = -1.0;  // every point behind the camera
  const FusionContext ctx(cloud, behind);
  const Tensor feats({1, 4, 4}, 1.0);
  const Tensor with_geom = continuous_fusion_forward(feats, ctx, integer_grid(2, 2), cfg, mlp);
  const auto expected = plain_mlp(mlp, {0.0, 0.0, 0.0, 0.5});
  EXPECT_NEAR(with_geom.at(0, 1, 1), expected[0], 1e-14);

  cfg.use_geometric_feature = false;
  std::mt19937_64 rng2(5);
  Mlp mlp2 = make_fusion_mlp(cfg, rng2);
  for (Real& v : mlp2.bias(2).data()) v = 0.25;
  const Tensor no_geom = continuous_fusion_forward(feats, ctx, integer_grid(2, 2), cfg, mlp2);
  for (Real v : no_geom.data()) EXPECT_EQ(v, 0.0);
}

TEST(ContinuousFusion, GradientsMatchFiniteDifferences) {
  const TinyScene s = tiny_scene(7);
  FusionConfig cfg{2, kInf, true, true, 3, 2, 1.0};
  std::mt19937_64 rng(8);
  Mlp mlp = make_fusion_mlp(cfg, rng);
  for (std::size_t l = 0; l < 3; ++l)
    for (Real& b : mlp.bias(l).data()) b = 0.05 * static_cast<Real>(l + 1);
  const FusionContext ctx(s.cloud, s.cam);
  Tensor feats = s.feats.clone();
  const Tensor ro = contfuse::testing::readout(Tensor({2, 4, 4}));
  std::vector<Tensor> inputs{feats};
  for (std::size_t l = 0; l < 3; ++l) {
    inputs.push_back(mlp.weight(l));
    inputs.push_back(mlp.bias(l));
  }
  const auto r = check_gradients(
      "continuous_fusion", [&] { return sum(mul(continuous_fusion_forward(feats, ctx, s.grid, cfg, mlp), ro)); },
      inputs);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(ContinuousFusion, PointOrderDoesNotMatter) {
  const TinyScene s = tiny_scene(11, 9);
  FusionConfig cfg{3, kInf, true, true, 3, 4, 1.0};
  std::mt19937_64 rng(1);
  const Mlp mlp = make_fusion_mlp(cfg, rng);
  const Tensor a = continuous_fusion_forward(s.feats, FusionContext(s.cloud, s.cam), s.grid, cfg, mlp);
  PointCloud shuffled = s.cloud;
  std::mt19937_64 srng(2);
  std::shuffle(shuffled.points.begin(), shuffled.points.end(), srng);
  const Tensor b = continuous_fusion_forward(s.feats, FusionContext(shuffled, s.cam), s.grid, cfg, mlp);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(ContinuousFusion, TranslationInvariantWithoutGeometricFeature) {
  const TinyScene s = tiny_scene(12, 7);
  FusionConfig cfg{2, kInf, false, true, 3, 4, 1.0};
  std::mt19937_64 rng(3);
  const Mlp mlp = make_fusion_mlp(cfg, rng);
  const Real tx = 8.0, ty = -6.0;
  PointCloud moved = s.cloud;
  for (Point3& p : moved.points) {
    p.x += tx;
    p.y += ty;
  }
  const BevGrid g2({s.grid.x_range().min + tx, s.grid.x_range().max + tx},
                   {s.grid.y_range().min + ty, s.grid.y_range().max + ty}, s.grid.z_range(), s.grid.nx(),
                   s.grid.ny(), s.grid.nz());
  // Compensating extrinsic: P' = P · translate(−t).
  CalibratedCamera cam2 = s.cam;
  for (int r = 0; r < 3; ++r)
    cam2.projection[r * 4 + 3] -= s.cam.projection[r * 4] * tx + s.cam.projection[r * 4 + 1] * ty;
  const Tensor a = continuous_fusion_forward(s.feats, FusionContext(s.cloud, s.cam), s.grid, cfg, mlp);
  const Tensor b = continuous_fusion_forward(s.feats, FusionContext(moved, cam2), g2, cfg, mlp);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(ContinuousFusion, OutputDependsOnlyOnNeighbors) {
  // Points project to well separated pixels so their bilinear taps do not overlap.
  PointCloud cloud{{{1.0, 1.0, 0}, {4.0, 1.0, 0}, {7.0, 1.0, 0}, {1.0, 5.0, 0}, {7.0, 5.0, 0}}, {}};
  const CalibratedCamera cam = planar_camera(8, 10);
  const BevGrid g = integer_grid(9, 7);
  FusionConfig cfg{2, kInf, true, true, 2, 3, 1.0};
  std::mt19937_64 rng(4);
  const Mlp mlp = make_fusion_mlp(cfg, rng);
  std::mt19937_64 frng(5);
  const Tensor feats = random_tensor({2, 8, 10}, frng);
  const FusionContext ctx(cloud, cam);
  const Tensor base = continuous_fusion_forward(feats, ctx, g, cfg, mlp);
  const std::size_t row = 1, col = 2;  // neighbours: points 0 and 1
  const auto nbrs = ctx.index().knn(2.0, 1.0, 2, kInf);
  Tensor masked = feats.clone();
  for (std::size_t j = 0; j < cloud.size(); ++j) {
    if (std::any_of(nbrs.begin(), nbrs.end(), [&](const Neighbor& n) { return n.index == j; })) continue;
    const auto& p = cloud.points[j];
    for (std::size_t ch = 0; ch < 2; ++ch) masked.at(ch, static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.x)) = 0.0;
  }
  const Tensor after = continuous_fusion_forward(masked, ctx, g, cfg, mlp);
  for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(after.at(ch, row, col), base.at(ch, row, col));
  bool changed = false;
  for (std::size_t i = 0; i < base.numel(); ++i) changed = changed || after[i] != base[i];
  EXPECT_TRUE(changed);
}

TEST(ContinuousFusion, ConfigMismatchRejected) {
  FusionConfig cfg{1, kInf, true, true, 3, 4, 1.0};
  std::mt19937_64 rng(0);
  const Mlp mlp = make_fusion_mlp(cfg, rng);
  const PointCloud cloud;
  const FusionContext ctx(cloud, planar_camera(4, 4));
  EXPECT_THROW(continuous_fusion_forward(Tensor({2, 4, 4}), ctx, integer_grid(2, 2), cfg, mlp), ConfigError);
  FusionConfig other = cfg;
  other.use_geometric_feature = false;
  EXPECT_THROW(continuous_fusion_forward(Tensor({3, 4, 4}), ctx, integer_grid(2, 2), other, mlp), ConfigError);
  other = cfg;
  other.k = 0;
  EXPECT_THROW(other.validate(), ConfigError);
}

TEST(FuseIntoBev, ElementWiseSum) {
  std::mt19937_64 rng(1);
  const Tensor bev = random_tensor({2, 3, 3}, rng), fused = random_tensor({2, 3, 3}, rng);
  EXPECT_EQ(fuse_into_bev(bev, Tensor({2, 3, 3}, 0.0)).values(), bev.values());
  EXPECT_EQ(fuse_into_bev(Tensor({2, 3, 3}, 0.0), fused).values(), fused.values());
  const Tensor s = fuse_into_bev(bev, fused);
  for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_EQ(s[i], bev[i] + fused[i]);
  EXPECT_THROW(fuse_into_bev(bev, Tensor({2, 3, 4})), DimensionError);
}

TEST(DiscreteFusion, SinglePointOnePixel) {
  FusionConfig cfg{1, kInf, false, false, 2, 3, 1.0};
  std::mt19937_64 rng(2);
  Mlp mlp = make_fusion_mlp(cfg, rng);
  for (Real& v : mlp.bias(2).data()) v = 1.0;
  const PointCloud cloud{{{2.2, 1.9, 0.0}}, {}};
  const Tensor out =
      discrete_fusion_forward(Tensor({2, 5, 5}, 0.5), FusionContext(cloud, planar_camera(5, 5)), integer_grid(5, 5), cfg, mlp);
  std::size_t nonzero_pixels = 0;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      bool nz = false;
      for (std::size_t ch = 0; ch < 3; ++ch) nz = nz || out.at(ch, r, c) != 0.0;
      if (nz) {
        ++nonzero_pixels;
        EXPECT_EQ(r, 2u);
        EXPECT_EQ(c, 2u);
      }
    }
  EXPECT_EQ(nonzero_pixels, 1u);
}

TEST(DiscreteFusion, SameCellCollisionsSum) {
  FusionConfig cfg{1, kInf, false, false, 1, 1, 1.0};
  std::mt19937_64 rng(2);
  const Mlp mlp = make_fusion_mlp(cfg, rng);
  std::mt19937_64 frng(1);
  const Tensor feats = random_tensor({1, 5, 5}, frng);
  const CalibratedCamera cam = planar_camera(5, 5);
  const PointCloud a{{{1.9, 2.1, 0}}, {}}, b{{{2.3, 1.8, 0}}, {}}, both{{{1.9, 2.1, 0}, {2.3, 1.8, 0}}, {}};
  const BevGrid g = integer_grid(5, 5);
  const Real va = discrete_fusion_forward(feats, FusionContext(a, cam), g, cfg, mlp).at(0, 2, 2);
  const Real vb = discrete_fusion_forward(feats, FusionContext(b, cam), g, cfg, mlp).at(0, 2, 2);
  const Real vab = discrete_fusion_forward(feats, FusionContext(both, cam), g, cfg, mlp).at(0, 2, 2);
  EXPECT_NEAR(vab, va + vb, 1e-14);
}

TEST(DiscreteFusion, MatchesLoopNestOracle) {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    const TinyScene s = tiny_scene(seed, 12);
    FusionConfig cfg{1, kInf, false, false, 3, 2, 1.0};
    std::mt19937_64 rng(seed);
    const Mlp mlp = make_fusion_mlp(cfg, rng);
    const Tensor got = discrete_fusion_forward(s.feats, FusionContext(s.cloud, s.cam), s.grid, cfg, mlp);
    const Tensor ref = loop_nest_discrete(s.feats, s.cloud, s.cam, s.grid, cfg, mlp);
    for (std::size_t i = 0; i < ref.numel(); ++i) ASSERT_NEAR(got[i], ref[i], 1e-10);
  }
}

TEST(ParametricContinuousConv, ConstantKernelSumsAllFeatures) {
  std::mt19937_64 rng(3);
  Mlp w({3, 4, 2}, rng);
  w.zero_output_layer();
  for (Real& v : w.bias(1).data()) v = 1.0;
  PointCloud pts{{{0, 0, 0}, {1, 2, 0}, {-3, 1, 1}}, {}};
  const Tensor f = random_tensor({3, 2}, rng);
  const Tensor h = parametric_continuous_conv(pts, f, {{0, 0, 0}, {5, 5, 5}}, 3, w);
  for (std::size_t q = 0; q < 2; ++q)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(h.at(q, c), f.at(0, c) + f.at(1, c) + f.at(2, c), 1e-14);
}

TEST(ParametricContinuousConv, HalfWeightSingleNeighbor) {
  std::mt19937_64 rng(3);
  Mlp w({3, 4, 1}, rng);
  w.zero_output_layer();
  w.bias(1)[0] = 0.5;
  PointCloud pts{{{1, 1, 0}}, {}};
  const Tensor f({1, 1}, 3.0);
  EXPECT_DOUBLE_EQ(parametric_continuous_conv(pts, f, {{0, 0, 0}}, 1, w)[0], 1.5);
}

TEST(ParametricContinuousConv, MatchesLoopNestOracle) {
  std::mt19937_64 rng(4);
  Mlp w({3, 5, 3}, rng);
  std::uniform_real_distribution<Real> d(-3, 3);
  PointCloud pts;
  for (int i = 0; i < 8; ++i) pts.points.push_back({d(rng), d(rng), d(rng)});
  const Tensor f = random_tensor({8, 3}, rng);
  std::vector<Point3> queries;
  for (int i = 0; i < 4; ++i) queries.push_back({d(rng), d(rng), d(rng)});
  const Tensor h = parametric_continuous_conv(pts, f, queries, 3, w);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<std::pair<Real, std::size_t>> cand;
    for (std::size_t j = 0; j < 8; ++j) {
      const Real dx = pts.points[j].x - queries[q].x, dy = pts.points[j].y - queries[q].y;
      cand.push_back({dx * dx + dy * dy, j});
    }
    std::sort(cand.begin(), cand.end());
    std::vector<Real> ref(3, 0.0);
    for (std::size_t n = 0; n < 3; ++n) {
      const Point3& p = pts.points[cand[n].second];
      const auto wt = plain_mlp(w, {queries[q].x - p.x, queries[q].y - p.y, queries[q].z - p.z});
      for (std::size_t c = 0; c < 3; ++c) ref[c] += wt[c] * f.at(cand[n].second, c);
    }
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(h.at(q, c), ref[c], 1e-10);
  }
}
