#pragma once

#include <random>
#include <string>

#include "contfuse/backbone.hpp"
#include "contfuse/box.hpp"

namespace contfuse {

/// 1×1 convolution from the final BEV map to one class logit plus the
/// regression offsets for every (class, orientation) anchor at each location.
class DetectionHeader {
 public:
  DetectionHeader(std::size_t in_channels, std::size_t num_classes, std::size_t num_orientations,
                  BoxVariant variant, std::mt19937_64& rng)
      : anchors_per_location_(num_classes * num_orientations),
        values_per_anchor_(1 + regression_terms(variant)),
        conv_(in_channels, anchors_per_location_ * values_per_anchor_, 1, 1, rng) {}

  std::size_t anchors_per_location() const { return anchors_per_location_; }
  std::size_t values_per_anchor() const { return values_per_anchor_; }
  Conv2dLayer& conv() { return conv_; }

  /// [C×ly×lx] → [ly×lx×anchors×(1+R)], column 0 the class logit. No activation.
  Tensor forward(const Tensor& bev) const {
    if (bev.rank() != 3 || bev.dim(0) != conv_.in_channels())
      throw DimensionError("header: input " + to_string(bev.shape()) + ", expected " +
                           std::to_string(conv_.in_channels()) + " channels");
    const std::size_t ly = bev.dim(1), lx = bev.dim(2);
    const Tensor maps = conv_.forward(bev);  // [A(1+R) × ly × lx]
    const Tensor rows = transpose(reshape(maps, {maps.dim(0), ly * lx}));
    return reshape(rows, {ly, lx, anchors_per_location_, values_per_anchor_});
  }

  void append_parameters(const std::string& prefix, NamedTensors& out) const {
    conv_.append_parameters(prefix + ".conv", out);
  }

 private:
  std::size_t anchors_per_location_;
  std::size_t values_per_anchor_;
  Conv2dLayer conv_;
};

}  // namespace contfuse
