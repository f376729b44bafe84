#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "pren/errors.hpp"

namespace pren {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Writes a binary PGM (P5, maxval 255).
inline void write_pgm(const std::string& path, const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height)
    throw FormatError("write_pgm: pixel count does not match " + std::to_string(img.width) + "x" +
                      std::to_string(img.height));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw FormatError("failed writing '" + path + "'");
}

namespace detail {

inline std::size_t pgm_read_number(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) throw FormatError("'" + path + "': malformed PGM header");
  std::size_t v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + static_cast<std::size_t>(c - '0');
    if (v > 1u << 20) throw FormatError("'" + path + "': PGM dimension too large");
    c = in.get();
  }
  return v;  // the single whitespace after the number has been consumed
}

}  // namespace detail

/// Reads a binary PGM (P5) with maxval <= 255.
inline GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') throw FormatError("'" + path + "' is not a binary PGM (P5)");
  GrayImage img;
  img.width = detail::pgm_read_number(in, path);
  img.height = detail::pgm_read_number(in, path);
  const std::size_t maxval = detail::pgm_read_number(in, path);
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 255)
    throw FormatError("'" + path + "': unsupported PGM geometry or maxval");
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw FormatError("'" + path + "': truncated pixel data");
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>((p * 255u + maxval / 2) / maxval);
  }
  return img;
}

}  // namespace pren
