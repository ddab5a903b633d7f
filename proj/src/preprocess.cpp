#include "disclabel/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace disclabel {

void ClaheParams::validate() const {
  if (tile_rows < 1 || tile_cols < 1) throw ValidationError("clahe tiles must be >= 1");
  if (clip_factor < 1.0) throw ValidationError("clahe clip factor must be >= 1");
  if (bins < 2) throw ValidationError("clahe bins must be >= 2");
}

void TargetParams::validate() const {
  if (sigma_px <= 0.0) throw ValidationError("target sigma must be positive");
  if (support_px < 2.0 * sigma_px)
    throw ValidationError("target support must be >= 2 x sigma");
}

Image2D average_middle_slices(const Volume3D& vol, int n) {
  vol.validate();
  if (n < 1) throw ValidationError("average_middle_slices: n must be >= 1");
  if (vol.slices < n)
    throw TooFewSlices("average_middle_slices: volume has " + std::to_string(vol.slices) +
                       " slices, need " + std::to_string(n));
  const int start = vol.slices / 2 - n / 2;

  Image2D out(vol.height, vol.width, Spacing{vol.spacing_mm.row_mm, vol.spacing_mm.col_mm});
  const std::size_t plane = static_cast<std::size_t>(vol.height) * vol.width;
  for (std::size_t i = 0; i < plane; ++i) {
    double sum = 0.0;
    for (int s = start; s < start + n; ++s)
      sum += vol.voxels[static_cast<std::size_t>(s) * plane + i];
    out.pixels[i] = static_cast<float>(sum / n);
  }
  return out;
}

Image2D resample_isotropic(const Image2D& img, double target_mm) {
  img.validate();
  if (target_mm <= 0.0) throw ValidationError("resample target spacing must be positive");

  const int out_h = static_cast<int>(std::lround(img.height * img.spacing_mm.row_mm / target_mm));
  const int out_w = static_cast<int>(std::lround(img.width * img.spacing_mm.col_mm / target_mm));
  Image2D out(std::max(out_h, 1), std::max(out_w, 1), Spacing{target_mm, target_mm});

  const double step_r = target_mm / img.spacing_mm.row_mm;
  const double step_c = target_mm / img.spacing_mm.col_mm;
  for (int r = 0; r < out.height; ++r) {
    const double sr = std::clamp(r * step_r, 0.0, static_cast<double>(img.height - 1));
    const int r0 = static_cast<int>(sr);
    const int r1 = std::min(r0 + 1, img.height - 1);
    const double fr = sr - r0;
    for (int c = 0; c < out.width; ++c) {
      const double sc = std::clamp(c * step_c, 0.0, static_cast<double>(img.width - 1));
      const int c0 = static_cast<int>(sc);
      const int c1 = std::min(c0 + 1, img.width - 1);
      const double fc = sc - c0;
      const double top = (1.0 - fc) * img.at(r0, c0) + fc * img.at(r0, c1);
      const double bot = (1.0 - fc) * img.at(r1, c0) + fc * img.at(r1, c1);
      out.at(r, c) = static_cast<float>((1.0 - fr) * top + fr * bot);
    }
  }
  return out;
}

CropOffset crop_offset(int center_row, int center_col, int size) {
  return CropOffset{center_row - size / 2, center_col - size / 2};
}

Image2D crop_centered(const Image2D& img, int center_row, int center_col, int size) {
  img.validate();
  if (size < 1) throw ValidationError("crop size must be >= 1");
  if (center_row < 0 || center_row >= img.height || center_col < 0 || center_col >= img.width)
    throw ValidationError("crop center outside image bounds");

  const CropOffset off = crop_offset(center_row, center_col, size);
  Image2D out(size, size, img.spacing_mm);
  for (int r = 0; r < size; ++r) {
    const int sr = off.row + r;
    if (sr < 0 || sr >= img.height) continue;
    for (int c = 0; c < size; ++c) {
      const int sc = off.col + c;
      if (sc >= 0 && sc < img.width) out.at(r, c) = img.at(sr, sc);
    }
  }
  return out;
}

namespace {

std::vector<int> tile_edges(int extent, int tiles) {
  const int tile = (extent + tiles - 1) / tiles;  // ceiling division
  std::vector<int> starts;
  for (int s = 0; s < extent && static_cast<int>(starts.size()) < tiles; s += tile)
    starts.push_back(s);
  return starts;
}

int bin_of(float v, int bins) {
  int b = static_cast<int>(v * bins);
  return std::clamp(b, 0, bins - 1);
}

// (value - min) / (max - min); constant images map to all zeros.
Image2D normalize_min_max(const Image2D& img) {
  const auto [mn, mx] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  Image2D out = img;
  if (*mn == *mx) {
    std::fill(out.pixels.begin(), out.pixels.end(), 0.0f);
    return out;
  }
  const float lo = *mn, range = *mx - *mn;
  for (auto& v : out.pixels) v = (v - lo) / range;
  return out;
}

}  // namespace

TileGrid clahe_grid(int height, int width, const ClaheParams& params) {
  params.validate();
  TileGrid g;
  g.row_starts = tile_edges(height, params.tile_rows);
  g.col_starts = tile_edges(width, params.tile_cols);
  for (std::size_t i = 0; i < g.row_starts.size(); ++i) {
    const int next = i + 1 < g.row_starts.size() ? g.row_starts[i + 1] : height;
    g.row_sizes.push_back(next - g.row_starts[i]);
  }
  for (std::size_t i = 0; i < g.col_starts.size(); ++i) {
    const int next = i + 1 < g.col_starts.size() ? g.col_starts[i + 1] : width;
    g.col_sizes.push_back(next - g.col_starts[i]);
  }
  return g;
}

std::vector<std::vector<double>> clahe_tile_mappings(const Image2D& img,
                                                     const ClaheParams& params) {
  img.validate();
  params.validate();
  const Image2D norm = normalize_min_max(img);
  const TileGrid grid = clahe_grid(img.height, img.width, params);
  const std::size_t n_tiles_r = grid.row_starts.size();
  const std::size_t n_tiles_c = grid.col_starts.size();

  std::vector<std::vector<double>> mappings(n_tiles_r * n_tiles_c);
  for (std::size_t tr = 0; tr < n_tiles_r; ++tr) {
    for (std::size_t tc = 0; tc < n_tiles_c; ++tc) {
      std::vector<double> hist(params.bins, 0.0);
      const int r0 = grid.row_starts[tr], r1 = r0 + grid.row_sizes[tr];
      const int c0 = grid.col_starts[tc], c1 = c0 + grid.col_sizes[tc];
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) hist[bin_of(norm.at(r, c), params.bins)] += 1.0;

      const double total = static_cast<double>(grid.row_sizes[tr]) * grid.col_sizes[tc];
      // Clip at clip_factor x mean bin count; single-pass equal redistribution
      // of the excess (bins may marginally exceed the clip afterwards).
      const double clip = params.clip_factor * total / params.bins;
      double excess = 0.0;
      for (double& h : hist)
        if (h > clip) {
          excess += h - clip;
          h = clip;
        }
      const double bonus = excess / params.bins;
      for (double& h : hist) h += bonus;

      std::vector<double>& map = mappings[tr * n_tiles_c + tc];
      map.resize(params.bins);
      double cum = 0.0;
      for (int b = 0; b < params.bins; ++b) {
        cum += hist[b];
        map[b] = cum / total;
      }
    }
  }
  return mappings;
}

Image2D clahe(const Image2D& img, const ClaheParams& params) {
  const auto mappings = clahe_tile_mappings(img, params);
  const Image2D norm = normalize_min_max(img);
  const TileGrid grid = clahe_grid(img.height, img.width, params);
  const std::size_t n_tiles_c = grid.col_starts.size();

  // Tile centers for the bilinear blend of neighboring tile mappings.
  std::vector<double> centers_r, centers_c;
  for (std::size_t i = 0; i < grid.row_starts.size(); ++i)
    centers_r.push_back(grid.row_starts[i] + (grid.row_sizes[i] - 1) / 2.0);
  for (std::size_t i = 0; i < grid.col_starts.size(); ++i)
    centers_c.push_back(grid.col_starts[i] + (grid.col_sizes[i] - 1) / 2.0);

  auto bracket = [](const std::vector<double>& centers, double x, std::size_t& i0,
                    std::size_t& i1, double& w) {
    if (x <= centers.front()) {
      i0 = i1 = 0;
      w = 0.0;
      return;
    }
    if (x >= centers.back()) {
      i0 = i1 = centers.size() - 1;
      w = 0.0;
      return;
    }
    i0 = 0;
    while (i0 + 1 < centers.size() && centers[i0 + 1] <= x) ++i0;
    i1 = i0 + 1;
    w = (x - centers[i0]) / (centers[i1] - centers[i0]);
  };

  Image2D out(img.height, img.width, img.spacing_mm);
  for (int r = 0; r < img.height; ++r) {
    std::size_t tr0, tr1;
    double wr;
    bracket(centers_r, r, tr0, tr1, wr);
    for (int c = 0; c < img.width; ++c) {
      std::size_t tc0, tc1;
      double wc;
      bracket(centers_c, c, tc0, tc1, wc);
      const int b = bin_of(norm.at(r, c), params.bins);
      const double m00 = mappings[tr0 * n_tiles_c + tc0][b];
      const double m01 = mappings[tr0 * n_tiles_c + tc1][b];
      const double m10 = mappings[tr1 * n_tiles_c + tc0][b];
      const double m11 = mappings[tr1 * n_tiles_c + tc1][b];
      const double top = (1.0 - wc) * m00 + wc * m01;
      const double bot = (1.0 - wc) * m10 + wc * m11;
      out.at(r, c) = static_cast<float>((1.0 - wr) * top + wr * bot);
    }
  }
  return out;
}

Heatmap make_target(const LabelSet& labels, int height, int width, const TargetParams& params) {
  params.validate();
  labels.validate_in_bounds(height, width);

  Heatmap target(height, width, Spacing{1.0, 1.0});
  const double inv_two_sigma_sq = 1.0 / (2.0 * params.sigma_px * params.sigma_px);
  const double support_sq = params.support_px * params.support_px;
  for (const auto& p : labels.points) {
    const int r_lo = std::max(0, static_cast<int>(std::floor(p.row - params.support_px)));
    const int r_hi = std::min(height - 1, static_cast<int>(std::ceil(p.row + params.support_px)));
    const int c_lo = std::max(0, static_cast<int>(std::floor(p.col - params.support_px)));
    const int c_hi = std::min(width - 1, static_cast<int>(std::ceil(p.col + params.support_px)));
    for (int r = r_lo; r <= r_hi; ++r) {
      for (int c = c_lo; c <= c_hi; ++c) {
        const double d2 = (r - p.row) * (r - p.row) + (c - p.col) * (c - p.col);
        if (d2 > support_sq) continue;
        const float v = static_cast<float>(std::exp(-d2 * inv_two_sigma_sq));
        target.at(r, c) = std::max(target.at(r, c), v);
      }
    }
  }
  return target;
}

LabelSet scale_labels(const LabelSet& labels, double row_factor, double col_factor) {
  if (row_factor <= 0.0 || col_factor <= 0.0)
    throw ValidationError("label scale factors must be positive");
  std::vector<KeypointLabel> pts = labels.points;
  for (auto& p : pts) {
    p.row *= row_factor;
    p.col *= col_factor;
  }
  return LabelSet::from_points(std::move(pts));
}

LabelSet shift_labels(const LabelSet& labels, double drow, double dcol) {
  std::vector<KeypointLabel> pts = labels.points;
  for (auto& p : pts) {
    p.row += drow;
    p.col += dcol;
  }
  return LabelSet::from_points(std::move(pts));
}

PreprocessedSample preprocess_sample(const Image2D& img, const LabelSet& labels, int crop_size,
                                     int center_row, int center_col,
                                     const ClaheParams& clahe_params,
                                     const TargetParams& target_params) {
  Image2D resampled = resample_isotropic(img, 1.0);
  LabelSet lbl = scale_labels(labels, img.spacing_mm.row_mm, img.spacing_mm.col_mm);

  if (center_row < 0) center_row = resampled.height / 2;
  if (center_col < 0) center_col = resampled.width / 2;
  const CropOffset off = crop_offset(center_row, center_col, crop_size);
  Image2D cropped = crop_centered(resampled, center_row, center_col, crop_size);
  lbl = shift_labels(lbl, -off.row, -off.col);
  lbl.validate_in_bounds(crop_size, crop_size);

  PreprocessedSample out;
  out.image = clahe(cropped, clahe_params);
  out.target = make_target(lbl, crop_size, crop_size, target_params);
  out.labels = std::move(lbl);
  return out;
}

}  // namespace disclabel
