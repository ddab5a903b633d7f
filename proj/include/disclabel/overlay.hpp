#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "disclabel/image.hpp"
#include "disclabel/labels.hpp"

namespace disclabel {

struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // RGBA8, row-major
};

// Grayscale base with the heatmap alpha-blended on top using a red-to-yellow
// colormap (alpha = heatmap value: 0 transparent, 1 opaque yellow). Label
// points, when given, are drawn as cyan crosses.
RgbaImage render_overlay(const Image2D& base, const Heatmap* heatmap = nullptr,
                         const LabelSet* labels = nullptr);

// Minimal 8-bit RGBA PNG encoder (zlib-backed IDAT).
void write_png_rgba(const std::filesystem::path& path, const RgbaImage& image);

void render_overlay_png(const std::filesystem::path& path, const Image2D& base,
                        const Heatmap* heatmap = nullptr, const LabelSet* labels = nullptr);

}  // namespace disclabel
