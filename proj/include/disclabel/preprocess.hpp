#pragma once

#include <vector>

#include "disclabel/image.hpp"
#include "disclabel/labels.hpp"

namespace disclabel {

struct ClaheParams {
  int tile_rows = 8;
  int tile_cols = 8;
  double clip_factor = 2.0;  // multiple of the mean bin count
  int bins = 256;

  void validate() const;
};

struct TargetParams {
  double sigma_px = 2.5;
  double support_px = 10.0;  // radius beyond which the target is exactly zero

  void validate() const;
};

// Pixelwise mean of the n slices centered on floor(S/2): indices
// floor(S/2)-floor(n/2) .. floor(S/2)+ceil(n/2)-1.
Image2D average_middle_slices(const Volume3D& vol, int n = 6);

// Bilinear resampling to isotropic target_mm spacing. Output dims are
// round(dim * spacing / target); source coordinates are clamped at the edges.
Image2D resample_isotropic(const Image2D& img, double target_mm = 1.0);

// size x size window with top-left at center - floor(size/2); out-of-bounds
// regions are zero-filled. Label coordinates shift by crop_offset().
Image2D crop_centered(const Image2D& img, int center_row, int center_col, int size = 141);
struct CropOffset {
  int row = 0, col = 0;
};
CropOffset crop_offset(int center_row, int center_col, int size);

// Tile geometry for CLAHE: ceiling-division tile sizes, e.g. 141/8 gives
// seven tiles of 18 plus one of 15.
struct TileGrid {
  std::vector<int> row_starts, row_sizes;
  std::vector<int> col_starts, col_sizes;
};
TileGrid clahe_grid(int height, int width, const ClaheParams& params);

// Per-tile clipped-histogram CDF mappings over the min-max normalized image;
// mappings[tile_r * tile_cols + tile_c][bin] in [0,1], non-decreasing in bin.
std::vector<std::vector<double>> clahe_tile_mappings(const Image2D& img,
                                                     const ClaheParams& params);

Image2D clahe(const Image2D& img, const ClaheParams& params = {});

// Max-combined unit-peak Gaussians around each keypoint, zero beyond the
// support radius.
Heatmap make_target(const LabelSet& labels, int height, int width,
                    const TargetParams& params = {});

// Label coordinate transforms matching the image operations above.
LabelSet scale_labels(const LabelSet& labels, double row_factor, double col_factor);
LabelSet shift_labels(const LabelSet& labels, double drow, double dcol);

struct PreprocessedSample {
  Image2D image;
  LabelSet labels;
  Heatmap target;
};

// Full chain: resample to 1 mm, crop to crop_size around the given center
// (image center when center_row/col < 0), CLAHE, Gaussian target. Labels are
// carried through every coordinate transform.
PreprocessedSample preprocess_sample(const Image2D& img, const LabelSet& labels,
                                     int crop_size = 141, int center_row = -1,
                                     int center_col = -1, const ClaheParams& clahe_params = {},
                                     const TargetParams& target_params = {});

}  // namespace disclabel
