#include "disclabel/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "disclabel/rng.hpp"

namespace disclabel {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kCordHalfWidthPx = 8.0;  // disc ellipse (±7 A-P) stays inside the column
constexpr double kBackgroundLevel = 0.05;

struct Intensities {
  double cord;
  double disc;
};

Intensities intensities_for(ContrastMode mode) {
  // t1_like: discs darker than the cord column; t2_like: inverted ordering.
  if (mode == ContrastMode::t1_like) return {0.85, 0.08};
  return {0.15, 1.00};
}

// Rasterization dilates the ellipse by half a pixel so the posterior tip
// pixel is painted even for sub-pixel disc centers.
constexpr double kRasterDilationPx = 0.5;

// Smooth multiplicative bias: 1 + amplitude * P(x,y) with P a random
// quadratic normalized so |P| <= 1 on the image.
struct BiasField {
  double c[6];  // 1, x, y, xy, x^2, y^2 coefficients

  static BiasField draw(Rng& rng) {
    BiasField b;
    double norm = 0.0;
    for (double& v : b.c) {
      v = rng.uniform(-1.0, 1.0);
      norm += std::abs(v);
    }
    if (norm > 0.0)
      for (double& v : b.c) v /= norm;
    return b;
  }

  double eval(double x, double y) const {
    return c[0] + c[1] * x + c[2] * y + c[3] * x * y + c[4] * x * x + c[5] * y * y;
  }
};

double mean5x5(const Image2D& img, int r0, int c0) {
  double sum = 0.0;
  int n = 0;
  for (int r = r0 - 2; r <= r0 + 2; ++r)
    for (int c = c0 - 2; c <= c0 + 2; ++c)
      if (r >= 0 && r < img.height && c >= 0 && c < img.width) {
        sum += img.at(r, c);
        ++n;
      }
  return sum / std::max(n, 1);
}

}  // namespace

void PhantomConfig::validate() const {
  if (size < 64) throw ValidationError("phantom size must be >= 64");
  if (disc_spacing_range_px.first < 10.0)
    throw ValidationError("disc spacing minimum must be >= 10 px");
  if (disc_spacing_range_px.second < disc_spacing_range_px.first)
    throw ValidationError("disc spacing range inverted");
  if (disc_count_range.first < 1 || disc_count_range.second < disc_count_range.first)
    throw ValidationError("bad disc count range");
  const double span =
      (disc_count_range.second - 1) * disc_spacing_range_px.second + 2.0 * kPhantomBorderPx;
  if (span > size - 1)
    throw ValidationError("disc_count x max spacing does not fit in the image height");
  if (noise_sigma < 0.0) throw ValidationError("noise sigma must be non-negative");
  if (bias_field_amplitude < 0.0 || bias_field_amplitude >= 1.0)
    throw ValidationError("bias field amplitude must be in [0,1)");
  if (curvature_amplitude_px < 0.0 ||
      curvature_amplitude_px + kCordHalfWidthPx + kDiscSemiAxisColPx + kPhantomBorderPx >
          size / 2.0)
    throw ValidationError("curvature amplitude too large for image size");
}

PhantomSample generate_phantom(const PhantomConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, 0x9e37));

  const int n = static_cast<int>(
      rng.uniform_int(config.disc_count_range.first, config.disc_count_range.second));
  const double phase = rng.uniform(0.0, kTwoPi);

  // Disc rows: random gaps inside [border, size-1-border].
  std::vector<double> gaps(static_cast<std::size_t>(n) - 1);
  double span = 0.0;
  for (double& g : gaps) {
    g = rng.uniform(config.disc_spacing_range_px.first, config.disc_spacing_range_px.second);
    span += g;
  }
  const double usable = config.size - 1.0 - 2.0 * kPhantomBorderPx;
  const double start = kPhantomBorderPx + rng.uniform(0.0, std::max(usable - span, 0.0));
  std::vector<double> disc_rows{start};
  for (double g : gaps) disc_rows.push_back(disc_rows.back() + g);

  const BiasField bias = BiasField::draw(rng);
  const Intensities level = intensities_for(config.contrast_mode);
  const double mid = (config.size - 1) / 2.0;
  auto centerline = [&](double r) {
    return mid + config.curvature_amplitude_px * std::sin(kTwoPi * r / config.size + phase);
  };

  Image2D img(config.size, config.size, Spacing{1.0, 1.0});
  for (int r = 0; r < config.size; ++r) {
    const double cl = centerline(r);
    for (int c = 0; c < config.size; ++c) {
      double v = kBackgroundLevel;
      if (std::abs(c - cl) <= kCordHalfWidthPx) v = level.cord;
      for (double dr_row : disc_rows) {
        const double dcl = centerline(dr_row);
        const double er = (r - dr_row) / (kDiscSemiAxisRowPx + kRasterDilationPx);
        const double ec = (c - dcl) / (kDiscSemiAxisColPx + kRasterDilationPx);
        if (er * er + ec * ec <= 1.0) {
          v = level.disc;
          break;
        }
      }
      const double x = 2.0 * c / (config.size - 1) - 1.0;
      const double y = 2.0 * r / (config.size - 1) - 1.0;
      v *= 1.0 + config.bias_field_amplitude * bias.eval(x, y);
      img.at(r, c) = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
    }
  }

  std::vector<KeypointLabel> pts;
  int lvl = 3;  // superior-most disc analogue plays the C2-C3 role
  for (double row : disc_rows) {
    KeypointLabel p;
    p.row = row;
    p.col = centerline(row) + kDiscSemiAxisColPx;  // posterior tip
    p.level = lvl;
    p.name = level_name(lvl);
    pts.push_back(std::move(p));
    ++lvl;
  }
  PhantomSample sample{std::move(img), LabelSet::from_points(std::move(pts))};

  // Contrast-to-noise guarantee on the clean signal: the 5x5 label
  // neighbourhood must sit >= 3 noise sigmas away from the cord level.
  const double margin = phantom_detectability_margin(sample.image, sample.labels);
  if (margin < 3.0 * config.noise_sigma)
    throw ValidationError("phantom labels not detectable: margin " + std::to_string(margin) +
                          " < 3 x noise sigma");

  for (auto& px : sample.image.pixels) {
    px = static_cast<float>(px + rng.normal(0.0, config.noise_sigma));
    px = std::clamp(px, 0.0f, 1.0f);
  }
  return sample;
}

double phantom_detectability_margin(const Image2D& image, const LabelSet& labels) {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& p : labels.points) {
    const int lr = static_cast<int>(std::lround(p.row));
    const int lc = static_cast<int>(std::lround(p.col));
    // Cord reference: same column track, 7 px away along the rows — outside
    // the ellipse (±3 px S-I) and its 5x5 window, inside the cord column.
    int ref_r = lr + 7;
    if (ref_r + 2 >= image.height) ref_r = lr - 7;
    const int ref_c = static_cast<int>(std::lround(p.col - kDiscSemiAxisColPx));
    const double disc_mean = mean5x5(image, lr, lc);
    const double cord_mean = mean5x5(image, ref_r, ref_c);
    margin = std::min(margin, std::abs(disc_mean - cord_mean));
  }
  return margin;
}

Manifest generate_dataset(const PhantomConfig& config, int n,
                          const std::filesystem::path& out_dir, std::uint64_t seed,
                          const SplitFractions& fractions) {
  if (n < 1) throw ValidationError("generate_dataset: n must be >= 1");
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string());

  std::vector<ManifestSample> samples;
  for (int i = 0; i < n; ++i) {
    PhantomConfig c = config;
    if (i % 2 == 1)
      c.contrast_mode = config.contrast_mode == ContrastMode::t1_like ? ContrastMode::t2_like
                                                                      : ContrastMode::t1_like;
    const PhantomSample sample = generate_phantom(c, seed + static_cast<std::uint64_t>(i));

    char name[40];
    std::snprintf(name, sizeof(name), "phantom_%04d", i);
    const std::string image_rel = std::string(name) + ".i2f";
    const std::string labels_rel = std::string(name) + "_labels.json";
    write_image(out_dir / image_rel, sample.image);
    write_labels(out_dir / labels_rel, sample.labels);

    ManifestSample ms;
    ms.image_path = image_rel;
    ms.labels_path = labels_rel;
    ms.contrast = c.contrast_mode == ContrastMode::t1_like ? Contrast::t1w : Contrast::t2w;
    samples.push_back(std::move(ms));
  }

  Manifest manifest = split_manifest(std::move(samples), fractions, seed);
  manifest.root = out_dir;
  write_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace disclabel
