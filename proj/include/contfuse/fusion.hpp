#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "contfuse/geometry.hpp"
#include "contfuse/knn.hpp"
#include "contfuse/mlp.hpp"
#include "contfuse/ops.hpp"

namespace contfuse {

struct FusionConfig {
  std::size_t k = 1;
  Real max_dist = 10.0;  // meters; +inf disables the cap
  bool use_geometric_feature = true;
  bool use_knn_pooling = true;
  std::size_t image_channels = 0;  // C of the sampled image feature map
  std::size_t output_dim = 0;      // D_o, channels of the receiving BEV layer
  /// Image pixels per feature-map pixel; the feature map may be downsampled.
  Real feature_stride = 1.0;

  /// Width of the per-neighbour MLP input, D_i.
  std::size_t input_dim() const { return image_channels + (use_geometric_feature ? 3 : 0); }

  void validate() const {
    if (k < 1) throw ConfigError("fusion: k must be >= 1");
    if (!(max_dist > 0.0)) throw ConfigError("fusion: max_dist must be positive");
    if (image_channels < 1 || output_dim < 1) throw ConfigError("fusion: dimensions must be >= 1");
    if (!(feature_stride > 0.0)) throw ConfigError("fusion: feature_stride must be positive");
  }
};

/// Shared per-neighbour MLP: two hidden layers of width D_i, output width D_o.
inline Mlp make_fusion_mlp(const FusionConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t di = cfg.input_dim();
  return Mlp({di, di, di, cfg.output_dim}, rng);
}

/// Per-scene data reused by every fusion layer: the BEV index and the camera
/// projection of each LIDAR point.
class FusionContext {
 public:
  FusionContext(const PointCloud& cloud, const CalibratedCamera& cam)
      : cloud_(&cloud), cam_(cam), index_(cloud), projections_(project_points(cloud, cam)) {}

  const PointCloud& cloud() const { return *cloud_; }
  const CalibratedCamera& camera() const { return cam_; }
  const BevIndex& index() const { return index_; }
  const std::vector<Projection>& projections() const { return projections_; }

  PixelCoord feature_coord(std::size_t point, Real feature_stride) const {
    const Projection& p = projections_[point];
    return {(p.u + 0.5) / feature_stride - 0.5, (p.v + 0.5) / feature_stride - 0.5, p.valid};
  }

 private:
  const PointCloud* cloud_;
  CalibratedCamera cam_;
  BevIndex index_;
  std::vector<Projection> projections_;
};

namespace detail {

inline void check_fusion_args(const Tensor& image_features, const FusionConfig& cfg, const Mlp& mlp,
                              bool with_offset) {
  cfg.validate();
  if (image_features.rank() != 3 || image_features.dim(0) != cfg.image_channels)
    throw ConfigError("fusion: image features " + to_string(image_features.shape()) +
                      " do not carry " + std::to_string(cfg.image_channels) + " channels");
  const std::size_t want_in = cfg.image_channels + (with_offset ? 3 : 0);
  if (mlp.input_dim() != want_in || mlp.output_dim() != cfg.output_dim)
    throw ConfigError("fusion: MLP is " + std::to_string(mlp.input_dim()) + "->" +
                      std::to_string(mlp.output_dim()) + ", config needs " + std::to_string(want_in) +
                      "->" + std::to_string(cfg.output_dim));
}

// [P×D] rows in raster order → [D×ny×nx]
inline Tensor rows_to_map(const Tensor& rows, std::size_t ny, std::size_t nx) {
  return reshape(transpose(rows), {rows.dim(1), ny, nx});
}

}  // namespace detail

/// Dense BEV map of image features on `target` (z = 0 reference plane):
/// h_i = Σ_{j ∈ KNN(i)} MLP(concat[f_j, x_j − x_i]).
///
/// Neighbours come from the BEV index (k nearest within max_dist, ties by point
/// index). A neighbour whose projection is invalid contributes MLP(concat[0, offset])
/// when offsets are used and nothing otherwise. Pixels without neighbours are zero.
inline Tensor continuous_fusion_forward(const Tensor& image_features, const FusionContext& ctx,
                                        const BevGrid& target, const FusionConfig& cfg,
                                        const Mlp& mlp) {
  detail::check_fusion_args(image_features, cfg, mlp, cfg.use_geometric_feature);
  const std::size_t nx = target.nx(), ny = target.ny(), pixels = nx * ny;

  std::vector<std::size_t> pixel_of_pair;
  std::vector<PixelCoord> coords;
  std::vector<Real> offsets;
  for (std::size_t row = 0; row < ny; ++row) {
    const Real qy = target.center_y(static_cast<Real>(row));
    for (std::size_t col = 0; col < nx; ++col) {
      const Real qx = target.center_x(static_cast<Real>(col));
      for (const Neighbor& nb : ctx.index().knn(qx, qy, cfg.k, cfg.max_dist)) {
        const PixelCoord pc = ctx.feature_coord(nb.index, cfg.feature_stride);
        if (!pc.valid && !cfg.use_geometric_feature) continue;
        const Point3& p = ctx.cloud().points[nb.index];
        pixel_of_pair.push_back(row * nx + col);
        coords.push_back(pc);
        if (cfg.use_geometric_feature) {
          offsets.push_back(p.x - qx);
          offsets.push_back(p.y - qy);
          offsets.push_back(p.z);
        }
      }
    }
  }
  if (coords.empty()) return Tensor({cfg.output_dim, ny, nx}, 0.0);

  Tensor input = bilinear_gather(image_features, coords);
  if (cfg.use_geometric_feature)
    input = concat({input, Tensor({coords.size(), 3}, std::move(offsets))}, 1);
  const Tensor per_pair = mlp.forward(input);
  return detail::rows_to_map(scatter_add_rows(per_pair, pixel_of_pair, pixels), ny, nx);
}

/// Ablation baseline without KNN pooling or offsets: each LIDAR point sends
/// MLP(f_j) to the BEV cell containing it; collisions sum, untouched cells stay zero.
inline Tensor discrete_fusion_forward(const Tensor& image_features, const FusionContext& ctx,
                                      const BevGrid& target, const FusionConfig& cfg,
                                      const Mlp& mlp) {
  detail::check_fusion_args(image_features, cfg, mlp, false);
  const std::size_t nx = target.nx(), ny = target.ny();
  std::vector<std::size_t> pixel_of_point;
  std::vector<PixelCoord> coords;
  for (std::size_t i = 0; i < ctx.cloud().size(); ++i) {
    const Point3& p = ctx.cloud().points[i];
    std::size_t col = 0, row = 0;
    if (!target.cell_of(p.x, p.y, col, row)) continue;
    const PixelCoord pc = ctx.feature_coord(i, cfg.feature_stride);
    if (!pc.valid) continue;
    pixel_of_point.push_back(row * nx + col);
    coords.push_back(pc);
  }
  if (coords.empty()) return Tensor({cfg.output_dim, ny, nx}, 0.0);
  const Tensor per_point = mlp.forward(bilinear_gather(image_features, coords));
  return detail::rows_to_map(scatter_add_rows(per_point, pixel_of_point, nx * ny), ny, nx);
}

/// Dispatches on cfg.use_knn_pooling between the continuous and discrete forms.
inline Tensor fusion_forward(const Tensor& image_features, const FusionContext& ctx,
                             const BevGrid& target, const FusionConfig& cfg, const Mlp& mlp) {
  return cfg.use_knn_pooling ? continuous_fusion_forward(image_features, ctx, target, cfg, mlp)
                             : discrete_fusion_forward(image_features, ctx, target, cfg, mlp);
}

inline Tensor fuse_into_bev(const Tensor& bev_features, const Tensor& fused) {
  return add(bev_features, fused);
}

/// Reference parametric continuous convolution: h_i = Σ_j MLP(x_i − x_j) ⊙ f_j over
/// the k nearest points of each query on the BEV plane. `weight_mlp` maps a 3D offset
/// to one weight per feature channel.
inline Tensor parametric_continuous_conv(const PointCloud& points, const Tensor& features,
                                         const std::vector<Point3>& queries, std::size_t k,
                                         const Mlp& weight_mlp) {
  if (features.rank() != 2 || features.dim(0) != points.size())
    throw DimensionError("parametric_continuous_conv: features must be [N×C]");
  const std::size_t c = features.dim(1);
  if (weight_mlp.input_dim() != 3 || weight_mlp.output_dim() != c)
    throw ConfigError("parametric_continuous_conv: weight MLP must map 3 -> " + std::to_string(c));
  if (k < 1) throw ConfigError("parametric_continuous_conv: k must be >= 1");
  const BevIndex index(points);
  std::vector<std::size_t> query_of_pair, point_of_pair;
  std::vector<Real> offsets;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const Point3& x = queries[q];
    for (const Neighbor& nb : index.knn(x.x, x.y, k, std::numeric_limits<Real>::infinity())) {
      const Point3& p = points.points[nb.index];
      query_of_pair.push_back(q);
      point_of_pair.push_back(nb.index);
      offsets.insert(offsets.end(), {x.x - p.x, x.y - p.y, x.z - p.z});
    }
  }
  if (point_of_pair.empty()) return Tensor({queries.size(), c}, 0.0);
  const Tensor weights = weight_mlp.forward(Tensor({point_of_pair.size(), 3}, std::move(offsets)));
  const Tensor weighted = mul(weights, gather_rows(features, point_of_pair));
  return scatter_add_rows(weighted, query_of_pair, queries.size());
}

}  // namespace contfuse
