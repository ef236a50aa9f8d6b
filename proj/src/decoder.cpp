// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "patchgraph/binary_io.hpp"
#include "patchgraph/errors.hpp"

namespace patchgraph {

namespace {

void check_grid(std::size_t rows, std::size_t h_s, std::size_t w_s) {
  if (rows != h_s * w_s)
    throw DimensionError("logits have " + std::to_string(rows) + " nodes but the grid is " + std::to_string(h_s) +
                         "x" + std::to_string(w_s));
}

void check_target(std::size_t h_s, std::size_t w_s, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw ConfigError("upsample target dimensions must be non-zero");
  if (target_h < h_s || target_w < w_s) throw ConfigError("upsample target smaller than the token grid");
}

// out[(y*W + x), c] = sum over the 4 taps; `scatter` runs the transpose.
template <typename Visit>
void for_each_tap(const AxisTaps& ty, const AxisTaps& tx, std::size_t w_s, Visit visit) {
  const std::size_t out_w = tx.lo.size();
  for (std::size_t y = 0; y < ty.lo.size(); ++y) {
    const double fy = ty.frac[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = tx.frac[x];
      const std::size_t p = y * out_w + x;
      visit(p, ty.lo[y] * w_s + tx.lo[x], (1.0 - fy) * (1.0 - fx));
      visit(p, ty.lo[y] * w_s + tx.hi[x], (1.0 - fy) * fx);
      visit(p, ty.hi[y] * w_s + tx.lo[x], fy * (1.0 - fx));
      visit(p, ty.hi[y] * w_s + tx.hi[x], fy * fx);
    }
  }
}

Tensor upsample_values(const Tensor& grid, std::size_t h_s, std::size_t w_s, std::size_t target_h,
                       std::size_t target_w) {
  const AxisTaps ty = bilinear_taps(h_s, target_h);
  const AxisTaps tx = bilinear_taps(w_s, target_w);
  const std::size_t c = grid.cols();
  Tensor out(target_h * target_w, c);
  for_each_tap(ty, tx, w_s, [&](std::size_t p, std::size_t src, double w) {
    auto o = out.row(p);
    auto s = grid.row(src);
    for (std::size_t k = 0; k < c; ++k) o[k] += w * s[k];
  });
  return out;
}

}  // namespace

Var logits_to_grid(Var logits, std::size_t h_s, std::size_t w_s) {
  check_grid(logits.shape().rows, h_s, w_s);
  return softmax_rows(logits);
}

ClassPosteriors logits_to_grid(const Tensor& logits, std::size_t h_s, std::size_t w_s) {
  check_grid(logits.rows(), h_s, w_s);
  return {h_s, w_s, dense::softmax_rows(logits)};
}

AxisTaps bilinear_taps(std::size_t in, std::size_t out) {
  AxisTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

Var bilinear_upsample(Var grid, std::size_t h_s, std::size_t w_s, std::size_t target_h, std::size_t target_w) {
  check_grid(grid.shape().rows, h_s, w_s);
  check_target(h_s, w_s, target_h, target_w);
  Tensor out = upsample_values(grid.value(), h_s, w_s, target_h, target_w);
  return grid.tape().record(
      std::move(out), {grid},
      [h_s, w_s, target_h, target_w](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
        const AxisTaps ty = bilinear_taps(h_s, target_h);
        const AxisTaps tx = bilinear_taps(w_s, target_w);
        const std::size_t c = g.cols();
        for_each_tap(ty, tx, w_s, [&](std::size_t p, std::size_t src, double w) {
          auto d = gi[0]->row(src);
          auto gp = g.row(p);
          for (std::size_t k = 0; k < c; ++k) d[k] += w * gp[k];
        });
      });
}

ClassPosteriors bilinear_upsample(const ClassPosteriors& grid, std::size_t target_h, std::size_t target_w) {
  check_grid(grid.probs.rows(), grid.height, grid.width);
  check_target(grid.height, grid.width, target_h, target_w);
  return {target_h, target_w, upsample_values(grid.probs, grid.height, grid.width, target_h, target_w)};
}

LabelMask argmax_mask(const ClassPosteriors& posteriors) {
  if (posteriors.num_classes() > 255) throw DimensionError("argmax_mask supports at most 255 classes");
  LabelMask mask(posteriors.height, posteriors.width);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    auto row = posteriors.probs.row(p);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    mask.pixels[p] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

void write_posterior_planes(const ClassPosteriors& posteriors, const std::filesystem::path& path) {
  io::ByteWriter w;
  const std::size_t pixels = posteriors.height * posteriors.width;
  for (std::size_t c = 0; c < posteriors.num_classes(); ++c)
    for (std::size_t p = 0; p < pixels; ++p) w.put<float>(static_cast<float>(posteriors.probs(p, c)));
  io::write_file(path, w.buffer());
}

}  // namespace patchgraph
