#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>

#include "disclabel/image.hpp"
#include "disclabel/io.hpp"
#include "disclabel/labels.hpp"

namespace disclabel {

enum class ContrastMode { t1_like, t2_like };

// Synthetic sagittal spine: a bright cord column on a gently curved
// centerline, elliptical disc analogues crossing it at randomized spacings,
// multiplicative bias field, additive Gaussian noise. Every disc keypoint is
// known exactly (posterior ellipse tip).
struct PhantomConfig {
  int size = 141;
  std::pair<int, int> disc_count_range{5, 7};
  std::pair<double, double> disc_spacing_range_px{14.0, 20.0};
  double curvature_amplitude_px = 5.0;
  double noise_sigma = 0.05;
  ContrastMode contrast_mode = ContrastMode::t1_like;
  double bias_field_amplitude = 0.2;

  void validate() const;
};

// Disc ellipse semi-axes and the border kept free of disc centers. The border
// leaves room for the ellipse plus the 10 px Gaussian target support.
constexpr double kDiscSemiAxisRowPx = 3.0;
constexpr double kDiscSemiAxisColPx = 7.0;
constexpr double kPhantomBorderPx = 10.0;

struct PhantomSample {
  Image2D image;
  LabelSet labels;
};

PhantomSample generate_phantom(const PhantomConfig& config, std::uint64_t seed);

// Minimum over labels of |mean 5x5 at label − mean 5x5 at a cord reference
// point| — the generation-time detectability margin.
double phantom_detectability_margin(const Image2D& image, const LabelSet& labels);

// Writes n image/label pairs (seeds seed..seed+n−1, contrast alternating from
// config.contrast_mode), splits them, writes manifest.json, returns it.
Manifest generate_dataset(const PhantomConfig& config, int n,
                          const std::filesystem::path& out_dir, std::uint64_t seed,
                          const SplitFractions& fractions = {});

}  // namespace disclabel
