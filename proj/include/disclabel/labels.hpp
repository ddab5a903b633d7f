#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "disclabel/errors.hpp"

namespace disclabel {

// Vertebra v−1 / vertebra v sandwich the disc at level v, so level 3 is
// "C2-C3", level 8 crosses into the thoracic spine as "C7-T1", and so on
// down to "L5-S1" (level 25).
std::string vertebra_name(int index);
std::string level_name(int level);
constexpr int kMinDiscLevel = 2;
constexpr int kMaxDiscLevel = 25;

struct KeypointLabel {
  double row = 0.0;  // superior-inferior coordinate, px
  double col = 0.0;  // anterior-posterior coordinate, px
  int level = kMinDiscLevel;
  std::string name;

  bool operator==(const KeypointLabel&) const = default;
};

// Disc keypoints for one image, sorted by ascending row with strictly
// increasing rows and levels.
struct LabelSet {
  std::vector<KeypointLabel> points;

  // Sorts by row and validates the invariants.
  static LabelSet from_points(std::vector<KeypointLabel> pts);

  void validate() const;
  void validate_in_bounds(int height, int width) const;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }

  bool operator==(const LabelSet&) const = default;
};

}  // namespace disclabel
