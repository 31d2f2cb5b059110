#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "contfuse/backbone.hpp"
#include "contfuse/header.hpp"
#include "contfuse/nms.hpp"
#include "contfuse/scene.hpp"

namespace contfuse {

struct ModelConfig {
  BevGrid grid{{0.0, 24.0}, {-12.0, 12.0}, {-0.5, 3.5}, 48, 48, 8};
  BackboneConfig backbone;
  FusionSettings fusion;
  std::size_t image_channels = 4;
  std::vector<AnchorShape> anchors{AnchorShape{}};
  std::vector<Real> orientations{0.0, std::numbers::pi / 2};
  BoxVariant variant = BoxVariant::Bev;
  EncodingOptions encoding;
  NmsOptions nms;

  void validate() const {
    backbone.validate();
    if (anchors.empty()) throw ConfigError("model: at least one anchor class is required");
    if (orientations.empty()) throw ConfigError("model: at least one anchor orientation is required");
    for (const AnchorShape& a : anchors)
      if (!(a.w > 0 && a.h > 0 && a.d > 0)) throw ConfigError("model: anchor sizes must be positive");
    if (image_channels < 1) throw ConfigError("model: image_channels must be >= 1");
    const std::size_t total = backbone.bev_total_stride();
    if (grid.nx() % total != 0 || grid.ny() % total != 0)
      throw ConfigError("model: BEV grid " + std::to_string(grid.nx()) + "x" + std::to_string(grid.ny()) +
                        " is not divisible by the backbone stride " + std::to_string(total));
    if (fusion.mode != FusionMode::None && (fusion.k < 1 || !(fusion.max_dist > 0)))
      throw ConfigError("model: fusion needs k >= 1 and a positive max_dist");
  }

  BevGrid output_grid() const { return grid.coarsen(backbone.bev_output_stride()); }
};

/// Two-stream detector: image stream → fusion → BEV stream → 1×1 header.
class Detector {
 public:
  Detector(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    // One generator per component, so BEV-only and fused models share BEV and header weights.
    constexpr std::uint64_t stream = 0x9E3779B97F4A7C15ULL;
    std::mt19937_64 bev_rng(seed), fusion_rng(seed + stream), image_rng(seed + 2 * stream),
        header_rng(seed + 3 * stream);
    if (cfg_.fusion.mode != FusionMode::None && !cfg_.backbone.fusion_groups.empty())
      image_ = std::make_unique<ImageStream>(cfg_.backbone, cfg_.image_channels, image_rng);
    bev_ = std::make_unique<BevStream>(cfg_.backbone, cfg_.grid.nz(), cfg_.fusion, bev_rng, fusion_rng);
    header_ = std::make_unique<DetectionHeader>(cfg_.backbone.bev_fpn_channels, cfg_.anchors.size(),
                                                cfg_.orientations.size(), cfg_.variant, header_rng);
    anchors_ = make_anchors(cfg_.output_grid(), cfg_.anchors, cfg_.orientations);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<Anchor>& anchors() const { return anchors_; }
  BevStream& bev_stream() { return *bev_; }
  DetectionHeader& header() { return *header_; }
  bool uses_image() const { return image_ != nullptr; }

  /// Header output [ly×lx×anchors×(1+R)] for one scene.
  Tensor forward(const SceneSample& scene) const {
    const Tensor bev_input = voxelize(scene.cloud, cfg_.grid);
    if (!image_) return header_->forward(bev_->forward(bev_input, cfg_.grid, nullptr, nullptr));
    const FeaturePyramid pyramid = image_->forward(scene.image_features);
    const FusionContext ctx(scene.cloud, scene.camera);
    return header_->forward(bev_->forward(bev_input, cfg_.grid, &pyramid, &ctx));
  }

  /// Scored boxes for every anchor at or above the NMS score threshold, before suppression.
  std::vector<DetectionBox> decode(const Tensor& head) const {
    const std::size_t vpa = header_->values_per_anchor();
    const auto values = head.data();
    std::vector<DetectionBox> out;
    for (std::size_t i = 0; i < anchors_.size(); ++i) {
      const Real* row = values.data() + i * vpa;
      const Real score = 1.0 / (1.0 + std::exp(-row[0]));
      if (score < cfg_.nms.score_threshold) continue;
      DetectionBox b = decode_targets(std::vector<Real>(row + 1, row + vpa), anchors_[i], cfg_.variant, cfg_.encoding);
      b.score = score;
      out.push_back(b);
    }
    return out;
  }

  std::vector<DetectionBox> detect(const SceneSample& scene) const {
    NoGradGuard guard;
    return nms(decode(forward(scene)), cfg_.nms);
  }

  NamedTensors named_parameters() const {
    NamedTensors out;
    if (image_) image_->append_parameters("image", out);
    bev_->append_parameters("bev", out);
    header_->append_parameters("header", out);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

 private:
  ModelConfig cfg_;
  std::unique_ptr<ImageStream> image_;
  std::unique_ptr<BevStream> bev_;
  std::unique_ptr<DetectionHeader> header_;
  std::vector<Anchor> anchors_;
};

}  // namespace contfuse
