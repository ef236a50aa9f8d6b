// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/image.hpp"

#include <cctype>
#include <string>

#include "patchgraph/binary_io.hpp"
#include "patchgraph/errors.hpp"

namespace patchgraph {

std::vector<std::uint8_t> encode_pgm(const Raster8& image) {
  if (image.pixels.size() != image.height * image.width) throw DimensionError("raster size mismatch");
  const std::string header = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Raster8 decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) -> std::size_t {
    skip_space();
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > (1u << 24)) throw FormatError(std::string("PGM: ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("PGM: expected ") + what, start);
    return value;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("PGM: bad magic, expected P5", 0);
  pos = 2;
  const std::size_t width = number("width");
  const std::size_t height = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval == 0 || maxval > 255) throw FormatError("PGM: only 8-bit maxval is supported", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("PGM: missing separator after header", pos);
  ++pos;
  if (bytes.size() - pos < width * height)
    throw FormatError("PGM: truncated pixel data (need " + std::to_string(width * height) + " bytes)", pos);
  Raster8 image(height, width);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
            bytes.begin() + static_cast<std::ptrdiff_t>(pos + width * height), image.pixels.begin());
  return image;
}

void write_pgm(const Raster8& image, const std::filesystem::path& path) { io::write_file(path, encode_pgm(image)); }

Raster8 read_pgm(const std::filesystem::path& path) { return decode_pgm(io::read_file(path)); }

void validate_mask(const LabelMask& mask, std::size_t num_classes) {
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    const auto v = mask.pixels[i];
    if (v != kIgnoreLabel && v >= num_classes)
      throw DataError("mask label " + std::to_string(v) + " at pixel " + std::to_string(i) + " is not < " +
                      std::to_string(num_classes) + " and not the ignore label");
  }
}

}  // namespace patchgraph
