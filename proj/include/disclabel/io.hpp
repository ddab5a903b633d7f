#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "disclabel/image.hpp"
#include "disclabel/labels.hpp"

namespace disclabel {

// I2F image file: ASCII magic line "I2F1", one JSON header line
// {"h":H,"w":W,"spacing_mm":[r,c]}, then H*W little-endian float32, row-major.
void write_image(const std::filesystem::path& path, const Image2D& image);
Image2D read_image(const std::filesystem::path& path);

// Label file: {"points":[{"row":..,"col":..,"level":..,"name":".."}]}.
// Predicted label sets carry an additional "source":"predicted" field.
void write_labels(const std::filesystem::path& path, const LabelSet& labels,
                  bool predicted = false);
LabelSet read_labels(const std::filesystem::path& path);

enum class Split { train, test, val };
enum class Contrast { t1w, t2w, synth };

std::string to_string(Split s);
std::string to_string(Contrast c);
Split split_from_string(const std::string& s);
Contrast contrast_from_string(const std::string& s);

struct ManifestSample {
  std::string image_path;   // relative to the manifest's directory
  std::string labels_path;
  Split split = Split::train;
  Contrast contrast = Contrast::synth;
};

struct Manifest {
  std::filesystem::path root;  // directory paths are resolved against
  std::vector<ManifestSample> samples;

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  std::vector<ManifestSample> in_split(Split s) const;
};

struct SplitFractions {
  double train = 0.75;
  double test = 0.10;
  double val = 0.15;
};

// Largest-remainder split counts: floor(n*f) each, remainders assigned by
// descending fractional part with ties broken train, test, val.
struct SplitCounts {
  std::size_t train = 0, test = 0, val = 0;
};
SplitCounts split_counts(std::size_t n, const SplitFractions& fractions);

// Deterministic seeded shuffle, then assignment by split_counts order.
Manifest split_manifest(std::vector<ManifestSample> samples, const SplitFractions& fractions,
                        std::uint64_t seed);

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
// check_paths verifies every referenced file exists (throws IoError).
Manifest read_manifest(const std::filesystem::path& path, bool check_paths = true);

}  // namespace disclabel
