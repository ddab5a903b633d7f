#include "disclabel/postprocess.hpp"

#include <algorithm>
#include <cstddef>

namespace disclabel {

std::vector<DetectedPoint> extract_keypoints(const Heatmap& heatmap, double threshold,
                                             int min_component_px) {
  heatmap.validate();
  const int h = heatmap.height, w = heatmap.width;

  std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
  std::vector<DetectedPoint> points;
  std::vector<std::size_t> stack;

  auto above = [&](int r, int c) { return heatmap.at(r, c) >= threshold; };

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * w + c;
      if (label[idx] >= 0 || !above(r, c)) continue;

      // flood fill one 8-connected component
      const int comp = static_cast<int>(points.size());
      double mass = 0.0, row_sum = 0.0, col_sum = 0.0;
      int size = 0;
      stack.clear();
      stack.push_back(idx);
      label[idx] = comp;
      while (!stack.empty()) {
        const std::size_t cur = stack.back();
        stack.pop_back();
        const int cr = static_cast<int>(cur / w), cc = static_cast<int>(cur % w);
        const double v = heatmap.at(cr, cc);
        mass += v;
        row_sum += v * cr;
        col_sum += v * cc;
        ++size;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = cr + dr, nc = cc + dc;
            if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
            const std::size_t nidx = static_cast<std::size_t>(nr) * w + nc;
            if (label[nidx] < 0 && above(nr, nc)) {
              label[nidx] = comp;
              stack.push_back(nidx);
            }
          }
        }
      }

      if (size >= min_component_px && mass > 0.0) {
        DetectedPoint p;
        p.row = row_sum / mass;
        p.col = col_sum / mass;
        p.mass = mass;
        p.component_size = size;
        points.push_back(p);
      }
    }
  }

  std::sort(points.begin(), points.end(),
            [](const DetectedPoint& a, const DetectedPoint& b) {
              return a.row != b.row ? a.row < b.row : a.col < b.col;
            });
  return points;
}

LabelSet assign_levels(std::vector<DetectedPoint> points, int start_level) {
  std::sort(points.begin(), points.end(),
            [](const DetectedPoint& a, const DetectedPoint& b) {
              return a.row != b.row ? a.row < b.row : a.col < b.col;
            });
  std::vector<KeypointLabel> pts;
  int level = start_level;
  for (const auto& p : points) {
    KeypointLabel kl;
    kl.row = p.row;
    kl.col = p.col;
    kl.level = level;
    kl.name = level_name(level);
    pts.push_back(std::move(kl));
    ++level;
  }
  return LabelSet::from_points(std::move(pts));
}

}  // namespace disclabel
