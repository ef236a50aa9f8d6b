// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "patchgraph/autodiff.hpp"
#include "patchgraph/image.hpp"

namespace patchgraph {

/// Posteriors over an H x W raster, one row per pixel (row-major), C columns.
struct ClassPosteriors {
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor probs;  // (height * width) x C

  std::size_t num_classes() const noexcept { return probs.cols(); }
};

/// Softmax per node; node n is grid cell (n / w_s, n % w_s).
Var logits_to_grid(Var logits, std::size_t h_s, std::size_t w_s);
ClassPosteriors logits_to_grid(const Tensor& logits, std::size_t h_s, std::size_t w_s);

/// Bilinear resampling weights for one axis, half-pixel (align_corners=false)
/// convention: source = (dst + 0.5) * in / out - 0.5, clamped to [0, in - 1].
struct AxisTaps {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;  // weight of `hi`
};
AxisTaps bilinear_taps(std::size_t in, std::size_t out);

/// Channelwise bilinear upsampling of a (h_s * w_s) x C grid to
/// (target_h * target_w) x C. Target dims must be >= grid dims and non-zero.
Var bilinear_upsample(Var grid, std::size_t h_s, std::size_t w_s, std::size_t target_h, std::size_t target_w);
ClassPosteriors bilinear_upsample(const ClassPosteriors& grid, std::size_t target_h, std::size_t target_w);

/// Per-pixel argmax, ties to the lowest class index.
LabelMask argmax_mask(const ClassPosteriors& posteriors);

/// C consecutive float32 little-endian planes of height x width.
void write_posterior_planes(const ClassPosteriors& posteriors, const std::filesystem::path& path);

}  // namespace patchgraph
