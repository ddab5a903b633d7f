#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "disclabel/errors.hpp"

namespace disclabel {

struct Spacing {
  double row_mm = 1.0;
  double col_mm = 1.0;
  bool operator==(const Spacing&) const = default;
};

// Single-channel sagittal image, row-major, row 0 superior. The same struct
// carries heatmaps (values in [0,1]).
struct Image2D {
  int height = 0;
  int width = 0;
  Spacing spacing_mm;
  std::vector<float> pixels;  // height * width, row-major

  Image2D() = default;
  Image2D(int h, int w, Spacing sp = {}, float fill = 0.0f)
      : height(h), width(w), spacing_mm(sp), pixels(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }

  bool in_bounds(double r, double c) const {
    return r >= 0.0 && r < height && c >= 0.0 && c < width;
  }

  void validate() const {
    if (height <= 0 || width <= 0)
      throw ValidationError("Image2D: non-positive dimensions");
    if (spacing_mm.row_mm <= 0.0 || spacing_mm.col_mm <= 0.0)
      throw ValidationError("Image2D: spacing must be positive");
    if (pixels.size() != static_cast<std::size_t>(height) * width)
      throw ValidationError("Image2D: pixel buffer size does not match dimensions");
    for (float v : pixels)
      if (!std::isfinite(v)) throw ValidationError("Image2D: non-finite pixel value");
  }
};

using Heatmap = Image2D;

struct VoxelSpacing {
  double slice_mm = 1.0;
  double row_mm = 1.0;
  double col_mm = 1.0;
};

// Slice-major 3D stack; only consumed by mid-slice averaging.
struct Volume3D {
  int slices = 0;
  int height = 0;
  int width = 0;
  VoxelSpacing spacing_mm;
  std::vector<float> voxels;  // slices * height * width

  Volume3D() = default;
  Volume3D(int s, int h, int w, VoxelSpacing sp = {})
      : slices(s), height(h), width(w), spacing_mm(sp),
        voxels(static_cast<std::size_t>(s) * h * w, 0.0f) {}

  float& at(int s, int r, int c) {
    return voxels[(static_cast<std::size_t>(s) * height + r) * width + c];
  }
  float at(int s, int r, int c) const {
    return voxels[(static_cast<std::size_t>(s) * height + r) * width + c];
  }

  void validate() const {
    if (slices <= 0 || height <= 0 || width <= 0)
      throw ValidationError("Volume3D: non-positive dimensions");
    if (voxels.size() != static_cast<std::size_t>(slices) * height * width)
      throw ValidationError("Volume3D: voxel buffer size does not match dimensions");
  }
};

}  // namespace disclabel
