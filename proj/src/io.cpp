#include "disclabel/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "disclabel/rng.hpp"

namespace disclabel {

using nlohmann::json;

namespace {

std::string shortest_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

void put_f32_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

json labels_to_json(const LabelSet& labels) {
  json pts = json::array();
  for (const auto& p : labels.points)
    pts.push_back({{"row", p.row}, {"col", p.col}, {"level", p.level}, {"name", p.name}});
  return json{{"points", pts}};
}

}  // namespace

void write_image(const std::filesystem::path& path, const Image2D& image) {
  image.validate();  // rejects non-finite pixels and bad headers
  std::string out;
  out.reserve(64 + image.pixels.size() * 4);
  out += "I2F1\n";
  out += "{\"h\":" + std::to_string(image.height) + ",\"w\":" + std::to_string(image.width) +
         ",\"spacing_mm\":[" + shortest_double(image.spacing_mm.row_mm) + "," +
         shortest_double(image.spacing_mm.col_mm) + "]}\n";
  for (float v : image.pixels) put_f32_le(out, v);
  write_file(path, out);
}

Image2D read_image(const std::filesystem::path& path) {
  const std::string data = read_file(path);

  auto magic_end = data.find('\n');
  if (magic_end == std::string::npos || data.substr(0, magic_end) != "I2F1")
    throw FormatError("bad I2F magic in " + path.string());
  auto header_end = data.find('\n', magic_end + 1);
  if (header_end == std::string::npos)
    throw FormatError("missing I2F header line in " + path.string());

  json header;
  try {
    header = json::parse(data.substr(magic_end + 1, header_end - magic_end - 1));
    Image2D img;
    img.height = header.at("h").get<int>();
    img.width = header.at("w").get<int>();
    img.spacing_mm.row_mm = header.at("spacing_mm").at(0).get<double>();
    img.spacing_mm.col_mm = header.at("spacing_mm").at(1).get<double>();
    if (img.height <= 0 || img.width <= 0 || img.spacing_mm.row_mm <= 0.0 ||
        img.spacing_mm.col_mm <= 0.0)
      throw FormatError("invalid I2F header values in " + path.string());

    const std::size_t expected = static_cast<std::size_t>(img.height) * img.width * 4;
    const std::size_t payload = data.size() - header_end - 1;
    if (payload != expected)
      throw CorruptFile("I2F payload length mismatch in " + path.string() + ": expected " +
                        std::to_string(expected) + " bytes, got " + std::to_string(payload));

    img.pixels.resize(static_cast<std::size_t>(img.height) * img.width);
    const auto* p = reinterpret_cast<const unsigned char*>(data.data()) + header_end + 1;
    for (auto& v : img.pixels) {
      v = get_f32_le(p);
      p += 4;
      if (!std::isfinite(v)) throw CorruptFile("non-finite pixel in " + path.string());
    }
    return img;
  } catch (const json::exception&) {
    throw FormatError("unparseable I2F header in " + path.string());
  }
}

void write_labels(const std::filesystem::path& path, const LabelSet& labels, bool predicted) {
  labels.validate();
  json doc = labels_to_json(labels);
  if (predicted) doc["source"] = "predicted";
  write_file(path, doc.dump() + "\n");
}

LabelSet read_labels(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  json doc;
  try {
    doc = json::parse(data);
  } catch (const json::exception& e) {
    throw FormatError("unparseable label file " + path.string() + ": " + e.what());
  }
  std::vector<KeypointLabel> pts;
  try {
    for (const auto& jp : doc.at("points")) {
      KeypointLabel p;
      p.row = jp.at("row").get<double>();
      p.col = jp.at("col").get<double>();
      p.level = jp.at("level").get<int>();
      p.name = jp.at("name").get<std::string>();
      pts.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw FormatError("bad label file structure in " + path.string() + ": " + e.what());
  }
  return LabelSet::from_points(std::move(pts));  // re-sorts by row, validates
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::val: return "val";
  }
  throw ValidationError("bad split enum");
}

std::string to_string(Contrast c) {
  switch (c) {
    case Contrast::t1w: return "T1w";
    case Contrast::t2w: return "T2w";
    case Contrast::synth: return "synth";
  }
  throw ValidationError("bad contrast enum");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "val") return Split::val;
  throw ValidationError("unknown split name: " + s);
}

Contrast contrast_from_string(const std::string& s) {
  if (s == "T1w") return Contrast::t1w;
  if (s == "T2w") return Contrast::t2w;
  if (s == "synth") return Contrast::synth;
  throw ValidationError("unknown contrast name: " + s);
}

std::vector<ManifestSample> Manifest::in_split(Split s) const {
  std::vector<ManifestSample> out;
  for (const auto& sample : samples)
    if (sample.split == s) out.push_back(sample);
  return out;
}

SplitCounts split_counts(std::size_t n, const SplitFractions& fractions) {
  const double sum = fractions.train + fractions.test + fractions.val;
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError("split fractions must sum to 1");
  if (fractions.train < 0.0 || fractions.test < 0.0 || fractions.val < 0.0)
    throw ValidationError("split fractions must be non-negative");

  const double f[3] = {fractions.train, fractions.test, fractions.val};
  std::size_t counts[3];
  double frac[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * f[i];
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  // Remainders by largest fractional part; ties go train, then test, then val.
  std::size_t remaining = n - assigned;
  while (remaining > 0) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best]) best = i;
    ++counts[best];
    frac[best] = -1.0;
    --remaining;
  }
  return SplitCounts{counts[0], counts[1], counts[2]};
}

Manifest split_manifest(std::vector<ManifestSample> samples, const SplitFractions& fractions,
                        std::uint64_t seed) {
  if (samples.empty()) throw EmptyDataset("split_manifest: empty sample list");
  const SplitCounts counts = split_counts(samples.size(), fractions);

  Rng rng(seed);
  rng.shuffle(samples);

  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i < counts.train)
      samples[i].split = Split::train;
    else if (i < counts.train + counts.test)
      samples[i].split = Split::test;
    else
      samples[i].split = Split::val;
  }
  Manifest m;
  m.samples = std::move(samples);
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  json arr = json::array();
  for (const auto& s : manifest.samples)
    arr.push_back({{"image_path", s.image_path},
                   {"labels_path", s.labels_path},
                   {"split", to_string(s.split)},
                   {"contrast", to_string(s.contrast)}});
  write_file(path, json{{"samples", arr}}.dump(2) + "\n");
}

Manifest read_manifest(const std::filesystem::path& path, bool check_paths) {
  const std::string data = read_file(path);
  json doc;
  try {
    doc = json::parse(data);
  } catch (const json::exception& e) {
    throw FormatError("unparseable manifest " + path.string() + ": " + e.what());
  }
  Manifest m;
  m.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  try {
    for (const auto& js : doc.at("samples")) {
      ManifestSample s;
      s.image_path = js.at("image_path").get<std::string>();
      s.labels_path = js.at("labels_path").get<std::string>();
      s.split = split_from_string(js.at("split").get<std::string>());
      s.contrast = contrast_from_string(js.at("contrast").get<std::string>());
      m.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError("bad manifest structure in " + path.string() + ": " + e.what());
  }
  if (check_paths) {
    for (const auto& s : m.samples) {
      if (!std::filesystem::exists(m.resolve(s.image_path)))
        throw IoError("manifest references missing image: " + m.resolve(s.image_path).string());
      if (!std::filesystem::exists(m.resolve(s.labels_path)))
        throw IoError("manifest references missing labels: " + m.resolve(s.labels_path).string());
    }
  }
  return m;
}

}  // namespace disclabel
