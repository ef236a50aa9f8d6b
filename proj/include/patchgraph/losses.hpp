// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

// Pixel-level segmentation objectives on full-resolution posteriors
// P[(H*W) x C]. Pixels labelled kIgnoreLabel contribute nothing.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "patchgraph/autodiff.hpp"
#include "patchgraph/image.hpp"

namespace patchgraph {

struct LossWeights {
  double ce = 1.0;
  double dice = 0.0;
  double lovasz = 0.0;
  double potts = 0.0;

  /// Non-negative, finite, at least one positive (ConfigError otherwise).
  void validate() const;

  /// CE + Dice + Lovasz + Potts mix.
  static LossWeights composite() { return {0.6, 0.2, 0.2, 0.05}; }
  /// Class-weighted cross-entropy only.
  static LossWeights ce_only() { return {1.0, 0.0, 0.0, 0.0}; }
};

/// Per-class cross-entropy weights, mean 1.
struct ClassWeightVector {
  std::vector<double> values;
};

/// w_c proportional to 1 / sqrt(count_c + 1), rescaled to mean 1.
ClassWeightVector class_weights_cb_sqrt(std::span<const std::uint64_t> counts);
ClassWeightVector uniform_class_weights(std::size_t num_classes);

/// mean over scored pixels of -w_y log(max(p_y, 1e-12)).
Var ce_loss(Var probs, const LabelMask& gt, const ClassWeightVector& weights);

/// 1 - mean over classes present in gt of (2 sum p g + 1) / (sum p + sum g + 1).
Var dice_loss(Var probs, const LabelMask& gt);

/// Lovasz-Softmax: per present class, errors |g - p| sorted descending (ties by
/// pixel index) dotted with the discrete gradient of the Jaccard loss
/// extension; mean over present classes.
Var lovasz_softmax_loss(Var probs, const LabelMask& gt);

/// Contrast-sensitive Potts term over 4-connected pixel pairs:
/// mean of b_pq * 0.5 |p_p - p_q|^2, b_pq = exp(-(I_p - I_q)^2 / (2 sigma_I^2)),
/// sigma_I the standard deviation of neighbour intensity differences (b = 1
/// when that deviation is zero).
Var potts_loss(Var probs, const GrayImage& image);

/// Boundary affinities b_pq, horizontal pairs first then vertical, each in
/// row-major order. Exposed for inspection and tests.
std::vector<double> potts_affinities(const GrayImage& image);

struct LossTerms {
  Var ce;
  Var dice;
  Var lovasz;
  Var potts;
};

/// lambda_CE L_CE + lambda_Dice L_Dice + lambda_Lov L_Lov + lambda_Potts L_Potts.
/// Terms with a zero coefficient may be left unbound.
Var composite_loss(const LossTerms& terms, const LossWeights& weights);

/// Evaluates only the terms with a positive coefficient and combines them.
/// `image` is required when weights.potts > 0.
struct LossBreakdown {
  Var total;
  LossTerms terms;
};
LossBreakdown segmentation_loss(Var probs, const LabelMask& gt, const GrayImage* image,
                                const ClassWeightVector& class_weights, const LossWeights& weights);

}  // namespace patchgraph
