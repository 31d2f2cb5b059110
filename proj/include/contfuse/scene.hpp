#pragma once

#include <string>
#include <vector>

#include "contfuse/box.hpp"
#include "contfuse/geometry.hpp"

namespace contfuse {

/// One frame: LIDAR sweep, camera feature map with its calibration, and labels.
struct SceneSample {
  std::string frame_id;
  PointCloud cloud;
  Tensor image_features;  // [C×H×W]
  CalibratedCamera camera;
  std::vector<DetectionBox> boxes;
};

}  // namespace contfuse
