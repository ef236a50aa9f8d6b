// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace patchgraph {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Row-major 8-bit single-channel raster (class mask or grey image).
struct Raster8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Raster8() = default;
  Raster8(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(h * w, fill) {}

  std::size_t size() const noexcept { return pixels.size(); }
  std::uint8_t& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }

  friend bool operator==(const Raster8&, const Raster8&) = default;
};

/// Class-index mask; kIgnoreLabel marks unscored pixels.
using LabelMask = Raster8;
using GrayImage = Raster8;

/// Binary PGM (P5, maxval 255). Reading accepts comments and any whitespace
/// layout allowed by the netpbm grammar; errors are FormatError.
std::vector<std::uint8_t> encode_pgm(const Raster8& image);
Raster8 decode_pgm(std::span<const std::uint8_t> bytes);
void write_pgm(const Raster8& image, const std::filesystem::path& path);
Raster8 read_pgm(const std::filesystem::path& path);

/// Mask whose labels must be < num_classes or kIgnoreLabel (DataError otherwise).
void validate_mask(const LabelMask& mask, std::size_t num_classes);

}  // namespace patchgraph
