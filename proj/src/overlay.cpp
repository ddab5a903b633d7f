#include "disclabel/overlay.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace disclabel {

RgbaImage render_overlay(const Image2D& base, const Heatmap* heatmap, const LabelSet* labels) {
  base.validate();
  if (heatmap) {
    heatmap->validate();
    if (heatmap->height != base.height || heatmap->width != base.width)
      throw ShapeError("overlay: heatmap shape does not match image shape");
  }

  RgbaImage out;
  out.width = base.width;
  out.height = base.height;
  out.pixels.resize(static_cast<std::size_t>(base.width) * base.height * 4);

  auto to_byte = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  };
  for (int r = 0; r < base.height; ++r) {
    for (int c = 0; c < base.width; ++c) {
      const double gray = 255.0 * std::clamp(static_cast<double>(base.at(r, c)), 0.0, 1.0);
      double red = gray, green = gray, blue = gray;
      if (heatmap) {
        const double a = std::clamp(static_cast<double>(heatmap->at(r, c)), 0.0, 1.0);
        // red (a=0) to yellow (a=1), alpha-weighted by a itself
        red = (1.0 - a) * gray + a * 255.0;
        green = (1.0 - a) * gray + a * (255.0 * a);
        blue = (1.0 - a) * gray;
      }
      std::uint8_t* px = out.pixels.data() + (static_cast<std::size_t>(r) * base.width + c) * 4;
      px[0] = to_byte(red);
      px[1] = to_byte(green);
      px[2] = to_byte(blue);
      px[3] = 255;
    }
  }

  if (labels) {
    for (const auto& p : labels->points) {
      const int pr = static_cast<int>(std::lround(p.row));
      const int pc = static_cast<int>(std::lround(p.col));
      for (int d = -3; d <= 3; ++d) {
        for (auto [rr, cc] : {std::pair{pr + d, pc}, std::pair{pr, pc + d}}) {
          if (rr < 0 || rr >= base.height || cc < 0 || cc >= base.width) continue;
          std::uint8_t* px =
              out.pixels.data() + (static_cast<std::size_t>(rr) * base.width + cc) * 4;
          px[0] = 0;
          px[1] = 255;
          px[2] = 255;
          px[3] = 255;
        }
      }
    }
  }
  return out;
}

namespace {

void put_u32_be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

void put_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                         static_cast<uInt>(body.size()));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_png_rgba(const std::filesystem::path& path, const RgbaImage& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 4)
    throw ValidationError("write_png_rgba: bad image buffer");

  // filter byte 0 per scanline
  std::string raw;
  raw.reserve(static_cast<std::size_t>(image.height) * (image.width * 4 + 1));
  for (int r = 0; r < image.height; ++r) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(image.pixels.data() +
                                             static_cast<std::size_t>(r) * image.width * 4),
               static_cast<std::size_t>(image.width) * 4);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw IoError("PNG deflate failed");
  compressed.resize(bound);

  std::string ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(image.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(6);   // color type RGBA
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace

  std::string out("\x89PNG\r\n\x1a\n", 8);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", compressed);
  put_chunk(out, "IEND", "");

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open PNG for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("PNG write failed: " + path.string());
}

void render_overlay_png(const std::filesystem::path& path, const Image2D& base,
                        const Heatmap* heatmap, const LabelSet* labels) {
  write_png_rgba(path, render_overlay(base, heatmap, labels));
}

}  // namespace disclabel
