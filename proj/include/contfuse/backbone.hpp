#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "contfuse/fusion.hpp"
#include "contfuse/mlp.hpp"
#include "contfuse/ops.hpp"

namespace contfuse {

struct GroupSpec {
  std::size_t layers = 2;  // 3×3 convolutions, two per residual block
  std::size_t channels = 8;
  std::size_t stride = 1;

  bool operator==(const GroupSpec&) const = default;
};

enum class FusionMode { None, Discrete, Continuous };

struct FusionSettings {
  FusionMode mode = FusionMode::Continuous;
  std::size_t k = 1;
  Real max_dist = 10.0;
  bool use_geometric_feature = true;
  bool operator==(const FusionSettings&) const = default;
};

struct BackboneConfig {
  std::vector<GroupSpec> bev_groups{{2, 8, 1}, {2, 16, 2}, {2, 32, 2}, {2, 48, 2}, {2, 64, 2}};
  std::vector<GroupSpec> image_groups{{2, 8, 1}, {2, 16, 2}, {2, 24, 2}, {2, 32, 2}};
  std::vector<std::size_t> fusion_groups{1, 2, 3, 4};
  std::size_t output_groups = 3;  // final BEV map merges this many trailing groups
  std::size_t bev_fpn_channels = 32;
  std::size_t image_fpn_channels = 16;

  /// Layer counts (2,4,8,12,12) and channels (32..256) of the full-size detector.
  static BackboneConfig paper_scale() {
    BackboneConfig c;
    c.bev_groups = {{2, 32, 1}, {4, 64, 2}, {8, 128, 2}, {12, 192, 2}, {12, 256, 2}};
    c.image_groups = {{4, 64, 1}, {4, 128, 2}, {4, 256, 2}, {4, 512, 2}};
    c.bev_fpn_channels = 128;
    c.image_fpn_channels = 128;
    return c;
  }

  void validate() const {
    auto check_groups = [](const std::vector<GroupSpec>& groups, const char* which) {
      if (groups.empty()) throw ConfigError(std::string(which) + " stream needs at least one group");
      for (std::size_t i = 0; i < groups.size(); ++i) {
        const GroupSpec& g = groups[i];
        if (g.layers < 2 || g.layers % 2 != 0)
          throw ConfigError(std::string(which) + " group " + std::to_string(i) + ": layer count must be even and >= 2");
        if (g.channels < 1) throw ConfigError(std::string(which) + " group " + std::to_string(i) + ": channels");
        if (i > 0 && g.stride != 2)
          throw ConfigError(std::string(which) + " group " + std::to_string(i) + ": stride must be 2");
        if (g.stride < 1) throw ConfigError(std::string(which) + " group 0: stride must be >= 1");
      }
    };
    check_groups(bev_groups, "bev");
    check_groups(image_groups, "image");
    if (bev_groups.front().stride != 1) throw ConfigError("bev group 0 must have stride 1");
    if (output_groups < 1 || output_groups > bev_groups.size())
      throw ConfigError("output_groups must lie in [1, number of bev groups]");
    for (std::size_t i = 0; i < fusion_groups.size(); ++i) {
      if (fusion_groups[i] >= bev_groups.size())
        throw ConfigError("fusion group index " + std::to_string(fusion_groups[i]) + " out of range");
      if (std::count(fusion_groups.begin(), fusion_groups.end(), fusion_groups[i]) > 1)
        throw ConfigError("fusion group indices must be unique");
    }
    if (bev_fpn_channels < 1 || image_fpn_channels < 1) throw ConfigError("fpn channels must be >= 1");
  }

  /// Product of the strides of groups [0, group].
  static std::size_t cumulative_stride(const std::vector<GroupSpec>& groups, std::size_t group) {
    std::size_t s = 1;
    for (std::size_t i = 0; i <= group; ++i) s *= groups[i].stride;
    return s;
  }

  std::size_t bev_output_stride() const { return cumulative_stride(bev_groups, bev_groups.size() - output_groups); }
  std::size_t bev_total_stride() const { return cumulative_stride(bev_groups, bev_groups.size() - 1); }
  std::size_t image_total_stride() const { return cumulative_stride(image_groups, image_groups.size() - 1); }

  bool operator==(const BackboneConfig&) const = default;
};

/// Convolution with learned bias; weights Xavier-uniform, bias zero.
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::mt19937_64& rng)
      : weight_({out, in, kernel, kernel}), bias_({out}, 0.0), stride_(stride), padding_(kernel / 2) {
    xavier_uniform(weight_, in * kernel * kernel, out * kernel * kernel, rng);
    weight_.set_requires_grad();
    bias_.set_requires_grad();
  }

  Tensor forward(const Tensor& x) const { return conv2d(x, weight_, &bias_, stride_, padding_); }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  std::size_t in_channels() const { return weight_.dim(1); }
  std::size_t out_channels() const { return weight_.dim(0); }

  void append_parameters(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".w", weight_);
    out.emplace_back(prefix + ".b", bias_);
  }

 private:
  Tensor weight_, bias_;
  std::size_t stride_ = 1, padding_ = 0;
};

/// relu(conv3×3 ∘ relu ∘ conv3×3(x) + skip(x)); skip is a strided 1×1 projection
/// when the channel count or resolution changes.
class ResidualBlock {
 public:
  ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, std::mt19937_64& rng)
      : first_(in, out, 3, stride, rng), second_(out, out, 3, 1, rng) {
    if (in != out || stride != 1) projection_.emplace_back(in, out, 1, stride, rng);
  }

  Tensor forward(const Tensor& x) const {
    const Tensor body = second_.forward(relu(first_.forward(x)));
    const Tensor skip = projection_.empty() ? x : projection_.front().forward(x);
    return relu(add(body, skip));
  }

  void append_parameters(const std::string& prefix, NamedTensors& out) const {
    first_.append_parameters(prefix + ".conv1", out);
    second_.append_parameters(prefix + ".conv2", out);
    if (!projection_.empty()) projection_.front().append_parameters(prefix + ".skip", out);
  }

 private:
  Conv2dLayer first_, second_;
  std::vector<Conv2dLayer> projection_;
};

class ResidualGroup {
 public:
  ResidualGroup(std::size_t in, const GroupSpec& spec, std::mt19937_64& rng) {
    for (std::size_t b = 0; b < spec.layers / 2; ++b)
      blocks_.emplace_back(b == 0 ? in : spec.channels, spec.channels, b == 0 ? spec.stride : 1, rng);
  }

  Tensor forward(Tensor x) const {
    for (const ResidualBlock& b : blocks_) x = b.forward(x);
    return x;
  }

  void append_parameters(const std::string& prefix, NamedTensors& out) const {
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].append_parameters(prefix + ".block" + std::to_string(b), out);
  }

 private:
  std::vector<ResidualBlock> blocks_;
};

/// Top-down multi-scale merge: starting from the coarsest map, repeatedly
/// upsample ×2 (nearest) and add the 1×1 projection of the next finer map.
class FpnCombiner {
 public:
  FpnCombiner() = default;
  /// in_channels ordered finest to coarsest.
  FpnCombiner(const std::vector<std::size_t>& in_channels, std::size_t out_channels, std::mt19937_64& rng) {
    for (std::size_t c : in_channels) projections_.emplace_back(c, out_channels, 1, 1, rng);
  }

  std::size_t num_inputs() const { return projections_.size(); }
  Conv2dLayer& projection(std::size_t i) { return projections_.at(i); }

  /// maps ordered finest to coarsest; result has the finest map's resolution.
  Tensor forward(const std::vector<Tensor>& maps) const {
    if (maps.size() != projections_.size())
      throw DimensionError("fpn_combine: expected " + std::to_string(projections_.size()) + " maps, got " +
                           std::to_string(maps.size()));
    for (std::size_t i = 0; i + 1 < maps.size(); ++i) {
      const Tensor& fine = maps[i];
      const Tensor& coarse = maps[i + 1];
      if (fine.rank() != 3 || coarse.rank() != 3 || fine.dim(1) != 2 * coarse.dim(1) ||
          fine.dim(2) != 2 * coarse.dim(2))
        throw DimensionError("fpn_combine: " + to_string(fine.shape()) + " and " + to_string(coarse.shape()) +
                             " are not a factor of 2 apart");
    }
    Tensor acc = projections_.back().forward(maps.back());
    for (std::size_t i = maps.size() - 1; i-- > 0;)
      acc = add(upsample_nearest2x(acc), projections_[i].forward(maps[i]));
    return acc;
  }

  void append_parameters(const std::string& prefix, NamedTensors& out) const {
    for (std::size_t i = 0; i < projections_.size(); ++i)
      projections_[i].append_parameters(prefix + ".proj" + std::to_string(i), out);
  }

 private:
  std::vector<Conv2dLayer> projections_;
};

struct FeaturePyramid {
  std::vector<Tensor> levels;  // one per image group, finest first
  Tensor combined;             // at levels.front() resolution
  std::size_t combined_stride = 1;  // image pixels per combined-map pixel
};

class ImageStream {
 public:
  ImageStream(const BackboneConfig& cfg, std::size_t in_channels, std::mt19937_64& rng) : specs_(cfg.image_groups) {
    std::size_t c = in_channels;
    std::vector<std::size_t> widths;
    for (const GroupSpec& g : specs_) {
      groups_.emplace_back(c, g, rng);
      c = g.channels;
      widths.push_back(c);
    }
    fpn_ = FpnCombiner(widths, cfg.image_fpn_channels, rng);
    in_channels_ = in_channels;
  }

  FeaturePyramid forward(const Tensor& image) const {
    const std::size_t total = BackboneConfig::cumulative_stride(specs_, specs_.size() - 1);
    if (image.rank() != 3 || image.dim(0) != in_channels_)
      throw DimensionError("image stream: input " + to_string(image.shape()) + ", expected " +
                           std::to_string(in_channels_) + " channels");
    if (image.dim(1) % total != 0 || image.dim(2) % total != 0)
      throw DimensionError("image stream: " + to_string(image.shape()) + " not divisible by stride " +
                           std::to_string(total));
    FeaturePyramid p;
    Tensor x = image;
    for (const ResidualGroup& g : groups_) {
      x = g.forward(x);
      p.levels.push_back(x);
    }
    p.combined = fpn_.forward(p.levels);
    p.combined_stride = specs_.front().stride;
    return p;
  }

  void append_parameters(const std::string& prefix, NamedTensors& out) const {
    for (std::size_t i = 0; i < groups_.size(); ++i) groups_[i].append_parameters(prefix + ".group" + std::to_string(i), out);
    fpn_.append_parameters(prefix + ".fpn", out);
  }

 private:
  std::vector<GroupSpec> specs_;
  std::vector<ResidualGroup> groups_;
  FpnCombiner fpn_;
  std::size_t in_channels_ = 0;
};

struct BevStreamOutput {
  std::vector<Tensor> groups;  // per-group outputs after any fusion
  Tensor combined;             // final map at output stride
};

class BevStream {
 public:
  /// Fusion MLPs draw from `fusion_rng` so the BEV weights do not depend on the fusion mode.
  BevStream(const BackboneConfig& cfg, std::size_t in_channels, const FusionSettings& fusion, std::mt19937_64& rng,
            std::mt19937_64& fusion_rng)
      : cfg_(cfg), fusion_(fusion), in_channels_(in_channels) {
    cfg_.validate();
    std::size_t c = in_channels;
    for (const GroupSpec& g : cfg_.bev_groups) {
      groups_.emplace_back(c, g, rng);
      c = g.channels;
    }
    if (fusion_.mode != FusionMode::None) {
      for (std::size_t gi : cfg_.fusion_groups) {
        const FusionConfig fc = fusion_config(gi, 1.0);
        fusion_mlps_.push_back(make_fusion_mlp(fc, fusion_rng));
      }
    }
    std::vector<std::size_t> widths;
    for (std::size_t i = cfg_.bev_groups.size() - cfg_.output_groups; i < cfg_.bev_groups.size(); ++i)
      widths.push_back(cfg_.bev_groups[i].channels);
    fpn_ = FpnCombiner(widths, cfg_.bev_fpn_channels, rng);
  }

  bool fusion_enabled() const { return fusion_.mode != FusionMode::None && !cfg_.fusion_groups.empty(); }
  std::vector<Mlp>& fusion_mlps() { return fusion_mlps_; }

  FusionConfig fusion_config(std::size_t group, Real feature_stride) const {
    FusionConfig fc;
    fc.k = fusion_.k;
    fc.max_dist = fusion_.max_dist;
    fc.use_knn_pooling = fusion_.mode == FusionMode::Continuous;
    fc.use_geometric_feature = fc.use_knn_pooling && fusion_.use_geometric_feature;
    fc.image_channels = cfg_.image_fpn_channels;
    fc.output_dim = cfg_.bev_groups[group].channels;
    fc.feature_stride = feature_stride;
    return fc;
  }

  /// `pyramid` and `ctx` are required when fusion is enabled and ignored otherwise.
  BevStreamOutput forward_all(const Tensor& bev_input, const BevGrid& grid, const FeaturePyramid* pyramid,
                              const FusionContext* ctx) const {
    if (bev_input.rank() != 3 || bev_input.dim(0) != in_channels_ || bev_input.dim(1) != grid.ny() ||
        bev_input.dim(2) != grid.nx())
      throw ConfigError("bev stream: input " + to_string(bev_input.shape()) + " does not match grid " +
                        std::to_string(grid.ny()) + "x" + std::to_string(grid.nx()) + " with " +
                        std::to_string(in_channels_) + " channels");
    const std::size_t total = cfg_.bev_total_stride();
    if (grid.nx() % total != 0 || grid.ny() % total != 0)
      throw ConfigError("bev stream: grid " + std::to_string(grid.ny()) + "x" + std::to_string(grid.nx()) +
                        " not divisible by stride " + std::to_string(total));
    if (fusion_enabled() && (pyramid == nullptr || ctx == nullptr))
      throw ConfigError("bev stream: fusion enabled but no image pyramid or scene context given");

    BevStreamOutput out;
    Tensor x = bev_input;
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      x = groups_[gi].forward(x);
      if (fusion_enabled()) {
        const auto it = std::find(cfg_.fusion_groups.begin(), cfg_.fusion_groups.end(), gi);
        if (it != cfg_.fusion_groups.end()) {
          const std::size_t slot = static_cast<std::size_t>(it - cfg_.fusion_groups.begin());
          const BevGrid target = grid.coarsen(BackboneConfig::cumulative_stride(cfg_.bev_groups, gi));
          const FusionConfig fc = fusion_config(gi, static_cast<Real>(pyramid->combined_stride));
          x = fuse_into_bev(x, fusion_forward(pyramid->combined, *ctx, target, fc, fusion_mlps_[slot]));
        }
      }
      out.groups.push_back(x);
    }
    const std::vector<Tensor> tail(out.groups.end() - static_cast<std::ptrdiff_t>(cfg_.output_groups), out.groups.end());
    out.combined = fpn_.forward(tail);
    return out;
  }

  Tensor forward(const Tensor& bev_input, const BevGrid& grid, const FeaturePyramid* pyramid,
                 const FusionContext* ctx) const {
    return forward_all(bev_input, grid, pyramid, ctx).combined;
  }

  void append_parameters(const std::string& prefix, NamedTensors& out) const {
    for (std::size_t i = 0; i < groups_.size(); ++i) groups_[i].append_parameters(prefix + ".group" + std::to_string(i), out);
    for (std::size_t i = 0; i < fusion_mlps_.size(); ++i)
      fusion_mlps_[i].append_parameters(prefix + ".fuse" + std::to_string(cfg_.fusion_groups[i]), out);
    fpn_.append_parameters(prefix + ".fpn", out);
  }

 private:
  BackboneConfig cfg_;
  FusionSettings fusion_;
  std::size_t in_channels_ = 0;
  std::vector<ResidualGroup> groups_;
  std::vector<Mlp> fusion_mlps_;
  FpnCombiner fpn_;
};

}  // namespace contfuse
