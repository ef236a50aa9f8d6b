// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchgraph/errors.hpp"

namespace patchgraph {

namespace {

constexpr double kLogClamp = 1e-12;
constexpr double kDiceSmooth = 1.0;

void check_labels(const Tensor& probs, const LabelMask& gt) {
  if (probs.rows() != gt.size())
    throw DimensionError("posteriors have " + std::to_string(probs.rows()) + " pixels, mask has " +
                         std::to_string(gt.size()));
  validate_mask(gt, probs.cols());
}

std::vector<bool> present_classes(const LabelMask& gt, std::size_t num_classes) {
  std::vector<bool> present(num_classes, false);
  for (auto v : gt.pixels)
    if (v != kIgnoreLabel) present[v] = true;
  return present;
}

}  // namespace

void LossWeights::validate() const {
  bool any = false;
  for (double v : {ce, dice, lovasz, potts}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss coefficients must be finite and non-negative");
    any = any || v > 0.0;
  }
  if (!any) throw ConfigError("at least one loss coefficient must be positive");
}

ClassWeightVector class_weights_cb_sqrt(std::span<const std::uint64_t> counts) {
  if (counts.empty() || std::all_of(counts.begin(), counts.end(), [](std::uint64_t c) { return c == 0; }))
    throw ConfigError("class_weights_cb_sqrt needs at least one non-zero class count");
  ClassWeightVector w;
  w.values.resize(counts.size());
  double total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    w.values[c] = 1.0 / std::sqrt(static_cast<double>(counts[c]) + 1.0);
    total += w.values[c];
  }
  const double mean = total / static_cast<double>(counts.size());
  for (double& v : w.values) v /= mean;
  return w;
}

ClassWeightVector uniform_class_weights(std::size_t num_classes) { return {std::vector<double>(num_classes, 1.0)}; }

Var ce_loss(Var probs, const LabelMask& gt, const ClassWeightVector& weights) {
  const Tensor& p = probs.value();
  check_labels(p, gt);
  if (weights.values.size() != p.cols())
    throw DimensionError("class weight vector has " + std::to_string(weights.values.size()) + " entries for " +
                         std::to_string(p.cols()) + " classes");
  std::size_t scored = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto y = gt.pixels[i];
    if (y == kIgnoreLabel) continue;
    ++scored;
    total += -weights.values[y] * std::log(std::max(p(i, y), kLogClamp));
  }
  const double inv = scored > 0 ? 1.0 / static_cast<double>(scored) : 0.0;
  return probs.tape().record(
      Tensor::scalar(total * inv), {probs},
      [&p, &gt, w = weights.values, inv](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
        const double gv = g[0];
        for (std::size_t i = 0; i < gt.size(); ++i) {
          const auto y = gt.pixels[i];
          if (y == kIgnoreLabel) continue;
          const double py = p(i, y);
          if (py > kLogClamp) (*gi[0])(i, y) += -gv * w[y] * inv / py;
        }
      });
}

Var dice_loss(Var probs, const LabelMask& gt) {
  const Tensor& p = probs.value();
  check_labels(p, gt);
  const std::size_t c_count = p.cols();
  const std::vector<bool> present = present_classes(gt, c_count);
  std::vector<double> inter(c_count, 0.0), psum(c_count, 0.0), gsum(c_count, 0.0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto y = gt.pixels[i];
    if (y == kIgnoreLabel) continue;
    for (std::size_t c = 0; c < c_count; ++c) psum[c] += p(i, c);
    inter[y] += p(i, y);
    gsum[y] += 1.0;
  }
  std::size_t n_present = 0;
  double score = 0.0;
  for (std::size_t c = 0; c < c_count; ++c) {
    if (!present[c]) continue;
    ++n_present;
    score += (2.0 * inter[c] + kDiceSmooth) / (psum[c] + gsum[c] + kDiceSmooth);
  }
  const double loss = n_present > 0 ? 1.0 - score / static_cast<double>(n_present) : 0.0;
  // d/dp_ic of -(1/K) (2 I_c + e) / (S_c + e), S_c = sum p + sum g
  std::vector<double> d_inter(c_count, 0.0), d_psum(c_count, 0.0);
  for (std::size_t c = 0; c < c_count && n_present > 0; ++c) {
    if (!present[c]) continue;
    const double denom = psum[c] + gsum[c] + kDiceSmooth;
    const double k = 1.0 / static_cast<double>(n_present);
    d_inter[c] = -k * 2.0 / denom;
    d_psum[c] = k * (2.0 * inter[c] + kDiceSmooth) / (denom * denom);
  }
  return probs.tape().record(Tensor::scalar(loss), {probs},
                             [&gt, d_inter, d_psum](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
                               const double gv = g[0];
                               const std::size_t c_count = d_inter.size();
                               for (std::size_t i = 0; i < gt.size(); ++i) {
                                 const auto y = gt.pixels[i];
                                 if (y == kIgnoreLabel) continue;
                                 auto row = gi[0]->row(i);
                                 for (std::size_t c = 0; c < c_count; ++c) row[c] += gv * d_psum[c];
                                 row[y] += gv * d_inter[y];
                               }
                             });
}

Var lovasz_softmax_loss(Var probs, const LabelMask& gt) {
  const Tensor& p = probs.value();
  check_labels(p, gt);
  const std::size_t c_count = p.cols();
  const std::vector<bool> present = present_classes(gt, c_count);
  std::vector<std::uint32_t> scored;
  scored.reserve(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt.pixels[i] != kIgnoreLabel) scored.push_back(static_cast<std::uint32_t>(i));
  const std::size_t m = scored.size();
  const std::size_t n_present = static_cast<std::size_t>(std::count(present.begin(), present.end(), true));

  // Per present class: the gradient coefficient of each scored pixel's error.
  Tensor coeff(gt.size(), c_count);
  double loss = 0.0;
  std::vector<double> err(m);
  std::vector<std::uint32_t> order(m);
  for (std::size_t c = 0; c < c_count; ++c) {
    if (!present[c]) continue;
    double gts = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = scored[k];
      const bool fg = gt.pixels[i] == c;
      err[k] = fg ? 1.0 - p(i, c) : p(i, c);
      gts += fg ? 1.0 : 0.0;
    }
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return err[a] > err[b]; });
    double cum_fg = 0.0, cum_bg = 0.0, prev_jaccard = 0.0, loss_c = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t k = order[r];
      const std::size_t i = scored[k];
      const bool fg = gt.pixels[i] == c;
      (fg ? cum_fg : cum_bg) += 1.0;
      const double jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
      const double grad = jaccard - prev_jaccard;
      prev_jaccard = jaccard;
      loss_c += err[k] * grad;
      coeff(i, c) = fg ? -grad : grad;
    }
    loss += loss_c;
  }
  const double inv = n_present > 0 ? 1.0 / static_cast<double>(n_present) : 0.0;
  return probs.tape().record(Tensor::scalar(loss * inv), {probs},
                             [coeff = std::move(coeff), inv](const Tensor& g, const Tensor& /*out*/,
                                                              std::span<Tensor* const> gi) {
                               const double s = g[0] * inv;
                               for (std::size_t k = 0; k < coeff.size(); ++k) (*gi[0])[k] += s * coeff[k];
                             });
}

std::vector<double> potts_affinities(const GrayImage& image) {
  const std::size_t h = image.height, w = image.width;
  std::vector<double> diffs;
  diffs.reserve(2 * h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c + 1 < w; ++c)
      diffs.push_back(static_cast<double>(image.at(r, c)) - static_cast<double>(image.at(r, c + 1)));
  for (std::size_t r = 0; r + 1 < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      diffs.push_back(static_cast<double>(image.at(r, c)) - static_cast<double>(image.at(r + 1, c)));
  if (diffs.empty()) return diffs;
  double mean = 0.0;
  for (double d : diffs) mean += d;
  mean /= static_cast<double>(diffs.size());
  double var = 0.0;
  for (double d : diffs) var += (d - mean) * (d - mean);
  var /= static_cast<double>(diffs.size());
  std::vector<double> b(diffs.size(), 1.0);
  if (var > 0.0)
    for (std::size_t k = 0; k < diffs.size(); ++k) b[k] = std::exp(-diffs[k] * diffs[k] / (2.0 * var));
  return b;
}

Var potts_loss(Var probs, const GrayImage& image) {
  const Tensor& p = probs.value();
  const std::size_t h = image.height, w = image.width;
  if (p.rows() != h * w)
    throw DimensionError("potts_loss: posteriors have " + std::to_string(p.rows()) + " pixels, image is " +
                         std::to_string(h) + "x" + std::to_string(w));
  std::vector<double> b = potts_affinities(image);
  const std::size_t c_count = p.cols();
  const std::size_t pairs = b.size();
  auto pair_at = [h, w](std::size_t k) -> std::pair<std::size_t, std::size_t> {
    const std::size_t horiz = h * (w - 1);
    if (k < horiz) {
      const std::size_t r = k / (w - 1), c = k % (w - 1);
      return {r * w + c, r * w + c + 1};
    }
    const std::size_t v = k - horiz;
    return {v, v + w};
  };
  double total = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    auto [a, q] = pair_at(k);
    double d2 = 0.0;
    for (std::size_t c = 0; c < c_count; ++c) {
      const double d = p(a, c) - p(q, c);
      d2 += d * d;
    }
    total += b[k] * 0.5 * d2;
  }
  const double inv = pairs > 0 ? 1.0 / static_cast<double>(pairs) : 0.0;
  return probs.tape().record(
      Tensor::scalar(total * inv), {probs},
      [&p, b = std::move(b), inv, pair_at](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
        const double gv = g[0] * inv;
        const std::size_t c_count = p.cols();
        for (std::size_t k = 0; k < b.size(); ++k) {
          auto [a, q] = pair_at(k);
          for (std::size_t c = 0; c < c_count; ++c) {
            const double d = gv * b[k] * (p(a, c) - p(q, c));
            (*gi[0])(a, c) += d;
            (*gi[0])(q, c) -= d;
          }
        }
      });
}

Var composite_loss(const LossTerms& terms, const LossWeights& weights) {
  weights.validate();
  Var total;
  auto accumulate = [&](Var term, double lambda, const char* name) {
    if (lambda == 0.0) return;
    if (!term.valid()) throw ConfigError(std::string("composite_loss: ") + name + " term missing for positive lambda");
    Var scaled = scale(term, lambda);
    total = total.valid() ? add(total, scaled) : scaled;
  };
  accumulate(terms.ce, weights.ce, "ce");
  accumulate(terms.dice, weights.dice, "dice");
  accumulate(terms.lovasz, weights.lovasz, "lovasz");
  accumulate(terms.potts, weights.potts, "potts");
  return total;
}

LossBreakdown segmentation_loss(Var probs, const LabelMask& gt, const GrayImage* image,
                                const ClassWeightVector& class_weights, const LossWeights& weights) {
  weights.validate();
  if (weights.potts > 0.0 && image == nullptr)
    throw ConfigError("lambda_potts > 0 requires the source image for boundary affinities");
  LossBreakdown out;
  if (weights.ce > 0.0) out.terms.ce = ce_loss(probs, gt, class_weights);
  if (weights.dice > 0.0) out.terms.dice = dice_loss(probs, gt);
  if (weights.lovasz > 0.0) out.terms.lovasz = lovasz_softmax_loss(probs, gt);
  if (weights.potts > 0.0) out.terms.potts = potts_loss(probs, *image);
  out.total = composite_loss(out.terms, weights);
  return out;
}

}  // namespace patchgraph
