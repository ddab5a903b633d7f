#include "disclabel/labels.hpp"

#include <cmath>

namespace disclabel {

std::string vertebra_name(int index) {
  if (index >= 1 && index <= 7) return "C" + std::to_string(index);
  if (index >= 8 && index <= 19) return "T" + std::to_string(index - 7);
  if (index >= 20 && index <= 24) return "L" + std::to_string(index - 19);
  if (index == 25) return "S1";
  throw ValidationError("vertebra index out of range: " + std::to_string(index));
}

std::string level_name(int level) {
  if (level < kMinDiscLevel || level > kMaxDiscLevel)
    throw ValidationError("disc level out of range: " + std::to_string(level));
  return vertebra_name(level - 1) + "-" + vertebra_name(level);
}

LabelSet LabelSet::from_points(std::vector<KeypointLabel> pts) {
  std::stable_sort(pts.begin(), pts.end(),
                   [](const KeypointLabel& a, const KeypointLabel& b) { return a.row < b.row; });
  LabelSet set{std::move(pts)};
  set.validate();
  return set;
}

void LabelSet::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!std::isfinite(p.row) || !std::isfinite(p.col))
      throw ValidationError("label coordinates must be finite");
    if (p.level < kMinDiscLevel)
      throw ValidationError("disc level must be >= " + std::to_string(kMinDiscLevel));
    if (p.name != level_name(p.level))
      throw ValidationError("label name '" + p.name + "' does not match level " +
                            std::to_string(p.level) + " ('" + level_name(p.level) + "')");
    if (i > 0) {
      if (points[i - 1].row == p.row)
        throw ValidationError("duplicate label rows");
      if (points[i - 1].row > p.row)
        throw ValidationError("labels not sorted by ascending row");
      if (points[i - 1].level >= p.level)
        throw ValidationError("label levels must be strictly increasing with row");
    }
  }
}

void LabelSet::validate_in_bounds(int height, int width) const {
  validate();
  for (const auto& p : points)
    if (p.row < 0.0 || p.row >= height || p.col < 0.0 || p.col >= width)
      throw ValidationError("label outside image bounds");
}

}  // namespace disclabel
