#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "contfuse/geometry.hpp"
#include "contfuse/gradcheck.hpp"
#include "contfuse/knn.hpp"
#include "test_util.hpp"

using namespace contfuse;
using contfuse::testing::random_tensor;

namespace {

constexpr Real kInf = std::numeric_limits<Real>::infinity();

CalibratedCamera identity_camera(std::size_t h = 100, std::size_t w = 100) {
  return {{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0}, h, w};
}

PointCloud random_cloud(std::size_t n, std::mt19937_64& rng, Real lo = -20, Real hi = 20) {
  std::uniform_real_distribution<Real> d(lo, hi), dz(-1.0, 3.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({d(rng), d(rng), dz(rng)});
  return c;
}

}  // namespace

TEST(ProjectPoints, OpticalAxisHitsPrincipalPoint) {
  PointCloud c{{{0, 0, 1}}, {}};
  const auto p = project_points(c, identity_camera());
  EXPECT_EQ(p[0].u, 0.0);
  EXPECT_EQ(p[0].v, 0.0);
  EXPECT_TRUE(p[0].valid);
}

TEST(ProjectPoints, BehindCameraInvalid) {
  PointCloud c{{{0, 0, -1}, {5, 5, 0}}, {}};
  const auto p = project_points(c, identity_camera());
  EXPECT_FALSE(p[0].valid);
  EXPECT_FALSE(p[1].valid);
}

TEST(ProjectPoints, OutsideImageInvalid) {
  PointCloud c{{{200, 5, 1}, {-1, 5, 1}, {99, 99, 1}}, {}};
  const auto p = project_points(c, identity_camera());
  EXPECT_FALSE(p[0].valid);
  EXPECT_FALSE(p[1].valid);
  EXPECT_TRUE(p[2].valid);
}

TEST(ProjectPoints, MatchesHomogeneousOracleAndIsScaleInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<Real> d(-2, 2);
  for (int trial = 0; trial < 50; ++trial) {
    CalibratedCamera cam{{}, 480, 640};
    for (Real& v : cam.projection) v = d(rng);
    const Point3 p{d(rng), d(rng), d(rng)};
    // Direct 3×4 multiply-and-divide.
    Real h[3];
    for (int r = 0; r < 3; ++r)
      h[r] = cam.projection[r * 4] * p.x + cam.projection[r * 4 + 1] * p.y + cam.projection[r * 4 + 2] * p.z +
             cam.projection[r * 4 + 3];
    const Projection got = project_point(p, cam);
    if (h[2] <= 0) {
      EXPECT_FALSE(got.valid);
      continue;
    }
    EXPECT_NEAR(got.u, h[0] / h[2], 1e-9 * std::max(1.0, std::abs(h[0] / h[2])));
    EXPECT_NEAR(got.v, h[1] / h[2], 1e-9 * std::max(1.0, std::abs(h[1] / h[2])));
    CalibratedCamera scaled = cam;
    for (Real& v : scaled.projection) v *= 3.7;
    const Projection s = project_point(p, scaled);
    EXPECT_NEAR(s.u, got.u, 1e-9 * std::max(1.0, std::abs(got.u)));
    EXPECT_NEAR(s.v, got.v, 1e-9 * std::max(1.0, std::abs(got.v)));
    EXPECT_EQ(s.valid, got.valid);
  }
}

TEST(BevGridTest, RejectsDegenerateConfig) {
  EXPECT_THROW(BevGrid({0, 0}, {0, 1}, {0, 1}, 1, 1, 1), std::invalid_argument);
  EXPECT_THROW(BevGrid({0, 1}, {0, 1}, {0, 1}, 0, 1, 1), std::invalid_argument);
}

TEST(BevGridTest, MetricAndLatticeCoordinatesAreInverse) {
  const BevGrid g({0, 70}, {-40, 40}, {-2, 2}, 512, 448, 32);
  for (Real c : {0.0, 17.0, 511.0, 3.25}) EXPECT_NEAR(g.frac_x(g.center_x(c)), c, 1e-9);
  for (Real r : {0.0, 200.5, 447.0}) EXPECT_NEAR(g.frac_y(g.center_y(r)), r, 1e-9);
  EXPECT_THROW(g.coarsen(3), DimensionError);
  EXPECT_EQ(g.coarsen(4).nx(), 128u);
}

TEST(Voxelize, PointAtLatticeNodeFillsOneVoxel) {
  const BevGrid g({0, 4}, {0, 4}, {0, 4}, 4, 4, 4);
  PointCloud c{{{g.center_x(1), g.center_y(2), g.center_z(3)}}, {}};
  const Tensor v = voxelize(c, g);
  EXPECT_EQ(v.at(3, 2, 1), 1.0);
  EXPECT_EQ(std::accumulate(v.data().begin(), v.data().end(), 0.0), 1.0);
}

TEST(Voxelize, CubeCenterSplitsEvenly) {
  const BevGrid g({0, 4}, {0, 4}, {0, 4}, 4, 4, 4);
  PointCloud c{{{2.0, 2.0, 2.0}}, {}};  // between lattice nodes 1 and 2 on every axis
  const Tensor v = voxelize(c, g);
  for (std::size_t z : {1u, 2u})
    for (std::size_t y : {1u, 2u})
      for (std::size_t x : {1u, 2u}) EXPECT_EQ(v.at(z, y, x), 0.125);
  EXPECT_EQ(std::accumulate(v.data().begin(), v.data().end(), 0.0), 1.0);
}

TEST(Voxelize, OutOfRangeIgnored) {
  const BevGrid g({0, 4}, {0, 4}, {0, 4}, 4, 4, 4);
  PointCloud c{{{-1, 1, 1}, {1, 1, 9}}, {}};
  const Tensor v = voxelize(c, g);
  EXPECT_EQ(std::accumulate(v.data().begin(), v.data().end(), 0.0), 0.0);
}

TEST(Voxelize, MatchesPerPointTentOracleAndConservesInteriorMass) {
  std::mt19937_64 rng(9);
  const BevGrid g({0, 16}, {-8, 8}, {-1, 3}, 16, 12, 5);
  std::uniform_real_distribution<Real> dx(-1, 17), dy(-9, 9), dz(-1.5, 3.5);
  PointCloud c;
  for (int i = 0; i < 400; ++i) c.points.push_back({dx(rng), dy(rng), dz(rng)});
  const Tensor v = voxelize(c, g);

  // Oracle: every voxel receives Π max(0, 1 − |lattice − node|) from every in-range point.
  std::vector<Real> ref(v.numel(), 0.0);
  int interior = 0;
  for (const Point3& p : c.points) {
    if (!g.contains(p)) continue;
    const Real fx = g.frac_x(p.x), fy = g.frac_y(p.y), fz = g.frac_z(p.z);
    if (fx >= 0 && fy >= 0 && fz >= 0 && fx <= g.nx() - 1.0 && fy <= g.ny() - 1.0 && fz <= g.nz() - 1.0)
      ++interior;
    for (std::size_t z = 0; z < g.nz(); ++z)
      for (std::size_t y = 0; y < g.ny(); ++y)
        for (std::size_t x = 0; x < g.nx(); ++x) {
          const Real w = std::max(0.0, 1 - std::abs(fx - x)) * std::max(0.0, 1 - std::abs(fy - y)) *
                         std::max(0.0, 1 - std::abs(fz - z));
          ref[(z * g.ny() + y) * g.nx() + x] += w;
        }
  }
  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(v[i], ref[i], 1e-12);

  // Mass of strictly interior points is conserved exactly.
  PointCloud inner;
  for (const Point3& p : c.points) {
    const Real fx = g.frac_x(p.x), fy = g.frac_y(p.y), fz = g.frac_z(p.z);
    if (g.contains(p) && fx >= 0 && fy >= 0 && fz >= 0 && fx <= g.nx() - 1.0 && fy <= g.ny() - 1.0 &&
        fz <= g.nz() - 1.0)
      inner.points.push_back(p);
  }
  const Tensor vi = voxelize(inner, g);
  EXPECT_NEAR(std::accumulate(vi.data().begin(), vi.data().end(), 0.0), interior, 1e-9);
}

TEST(Knn, QueryAtExistingPoint) {
  PointCloud c{{{0, 0, 0}, {1, 1, 0}, {5, 5, 0}}, {}};
  const BevIndex idx(c);
  const auto r = idx.knn(1, 1, 1, kInf);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].index, 1u);
}

TEST(Knn, CollinearByHand) {
  PointCloud c{{{0, 0, 0}, {2, 0, 0}, {5, 0, 0}}, {}};
  const auto r = BevIndex(c).knn(1.5, 0, 2, 100.0);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].index, 1u);
  EXPECT_EQ(r[1].index, 0u);
}

TEST(Knn, EmptyCloudAndDistanceCap) {
  const BevIndex empty(PointCloud{});
  EXPECT_TRUE(empty.knn(0, 0, 3, kInf).empty());
  PointCloud c{{{10, 0, 0}}, {}};
  EXPECT_TRUE(BevIndex(c).knn(0, 0, 1, 3.0).empty());
  EXPECT_EQ(BevIndex(c).knn(0, 0, 1, 10.0).size(), 1u);  // cap is inclusive
}

TEST(Knn, DuplicatesBothRetrievableLowerIndexFirst) {
  PointCloud c{{{3, 3, 0}, {1, 1, 0}, {1, 1, 2}, {1, 1, -1}}, {}};
  const auto r = BevIndex(c).knn(1, 1, 3, kInf);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].index, 1u);
  EXPECT_EQ(r[1].index, 2u);
  EXPECT_EQ(r[2].index, 3u);
}

TEST(Knn, IndexEqualsLinearScan) {
  std::mt19937_64 rng(42);
  const PointCloud c = random_cloud(500, rng);
  const BevIndex idx = build_bev_index(c);
  std::uniform_real_distribution<Real> q(-25, 25);
  for (int i = 0; i < 100; ++i) {
    const Real qx = q(rng), qy = q(rng);
    for (std::size_t k : {1u, 3u, 5u})
      for (Real d : {3.0, 10.0, kInf}) {
        const auto fast = knn_bev(qx, qy, idx, k, d);
        const auto slow = knn_bev_brute(qx, qy, c, k, d);
        ASSERT_EQ(fast, slow) << "query " << qx << "," << qy << " k=" << k << " d=" << d;
      }
  }
}

TEST(Knn, GridAlignedTiesMatchLinearScan) {
  // Integer lattice produces many equal distances; tie-break must still agree.
  PointCloud c;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) c.points.push_back({static_cast<Real>((i * 7) % 12), static_cast<Real>(j), 0});
  const BevIndex idx(c);
  for (Real qx = -0.5; qx < 12; qx += 0.5)
    for (Real qy = -0.5; qy < 12; qy += 1.5)
      for (std::size_t k : {1u, 4u, 9u}) ASSERT_EQ(idx.knn(qx, qy, k, 2.5), knn_bev_brute(qx, qy, c, k, 2.5));
}

TEST(Bilinear, IntegerCoordinatesReturnPixel) {
  std::mt19937_64 rng(1);
  const Tensor f = random_tensor({3, 4, 5}, rng);
  const Tensor s = bilinear_sample(f, 3, 2);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s[c], f.at(c, 2, 3));
}

TEST(Bilinear, ReproducesLinearRamp) {
  Tensor f({1, 4, 6});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 6; ++x) f.at(0, y, x) = static_cast<Real>(x);
  EXPECT_DOUBLE_EQ(bilinear_sample(f, 2.5, 1.0)[0], 2.5);
  EXPECT_DOUBLE_EQ(bilinear_sample(f, 2.5, 1.7)[0], 2.5);
}

TEST(Bilinear, ExactOnAffineMaps) {
  Tensor f({2, 5, 7});
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 7; ++x) {
      f.at(0, y, x) = 0.3 * x - 1.2 * y + 0.7;
      f.at(1, y, x) = -2.0 * x + 0.5 * y;
    }
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<Real> du(0, 6), dv(0, 4);
  for (int i = 0; i < 50; ++i) {
    const Real u = du(rng), v = dv(rng);
    const Tensor s = bilinear_sample(f, u, v);
    EXPECT_NEAR(s[0], 0.3 * u - 1.2 * v + 0.7, 1e-12);
    EXPECT_NEAR(s[1], -2.0 * u + 0.5 * v, 1e-12);
  }
}

TEST(Bilinear, OutsideReturnsZero) {
  const Tensor f({2, 3, 3}, 1.0);
  for (auto [u, v] : {std::pair{-0.1, 1.0}, {1.0, 2.01}, {3.0, 0.0}}) {
    const Tensor s = bilinear_sample(f, u, v);
    EXPECT_EQ(s[0], 0.0);
    EXPECT_EQ(s[1], 0.0);
  }
  EXPECT_EQ(bilinear_sample(f, 2.0, 2.0)[0], 1.0);  // far corner is inside
}

TEST(Bilinear, MatchesClosedFormOracle) {
  std::mt19937_64 rng(13);
  const Tensor f = random_tensor({4, 6, 9}, rng);
  std::uniform_real_distribution<Real> du(0, 8), dv(0, 5);
  for (int i = 0; i < 200; ++i) {
    const Real u = du(rng), v = dv(rng);
    const int x0 = static_cast<int>(u), y0 = static_cast<int>(v);
    const int x1 = std::min(x0 + 1, 8), y1 = std::min(y0 + 1, 5);
    const Real a = u - x0, b = v - y0;
    const Tensor s = bilinear_sample(f, u, v);
    for (std::size_t c = 0; c < 4; ++c) {
      const Real ref = (1 - a) * (1 - b) * f.at(c, y0, x0) + a * (1 - b) * f.at(c, y0, x1) +
                       (1 - a) * b * f.at(c, y1, x0) + a * b * f.at(c, y1, x1);
      ASSERT_NEAR(s[c], ref, 1e-12);
    }
  }
}

TEST(Bilinear, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  Tensor f = random_tensor({3, 5, 6}, rng);
  const std::vector<PixelCoord> pts{{0.3, 0.2, true}, {4.9, 3.7, true}, {2.0, 2.5, true},
                                    {7.0, 1.0, true}, {1.0, 1.0, false}};
  const Tensor ro = contfuse::testing::readout(Tensor({pts.size(), 3}));
  const auto r = check_gradients("bilinear_gather", [&] { return sum(mul(bilinear_gather(f, pts), ro)); }, {f});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}
