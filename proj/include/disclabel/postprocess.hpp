#pragma once

#include <vector>

#include "disclabel/image.hpp"
#include "disclabel/labels.hpp"

namespace disclabel {

struct DetectedPoint {
  double row = 0.0;  // intensity-weighted centroid, sub-pixel
  double col = 0.0;
  double mass = 0.0;       // sum of heatmap values in the component
  int component_size = 0;  // pixel count
};

// Threshold the heatmap, take 8-connected components, drop components smaller
// than min_component_px, return each survivor's heatmap-weighted center of
// mass sorted by ascending row.
std::vector<DetectedPoint> extract_keypoints(const Heatmap& heatmap, double threshold = 0.5,
                                             int min_component_px = 3);

// Superior-most point gets start_level, the rest consecutive levels.
LabelSet assign_levels(std::vector<DetectedPoint> points, int start_level = 3);

}  // namespace disclabel
