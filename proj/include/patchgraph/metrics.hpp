// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "patchgraph/image.hpp"

namespace patchgraph {

/// Pixel confusion counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const noexcept { return c_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * c_ + pred]; }
  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1);

  /// Adds every non-ignored pixel. Dimensions must match; predictions must
  /// be valid class indices.
  void accumulate(const LabelMask& truth, const LabelMask& pred);
  void merge(const ConfusionMatrix& other);

  std::uint64_t true_positives(std::size_t c) const;
  std::uint64_t false_positives(std::size_t c) const;
  std::uint64_t false_negatives(std::size_t c) const;
  std::uint64_t total() const;

 private:
  std::size_t c_;
  std::vector<std::uint64_t> counts_;
};

/// nullopt for classes absent from both truth and prediction.
std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm);
std::vector<std::optional<double>> per_class_dice(const ConfusionMatrix& cm);

struct MacroScores {
  double miou = 0.0;
  double mdice = 0.0;
  std::size_t classes_scored = 0;
};

/// Means over the defined per-class values, background included.
/// EvaluationError when no class is defined.
MacroScores macro_means(const ConfusionMatrix& cm);

/// Same reduction over externally supplied per-class values.
double macro_mean(const std::vector<std::optional<double>>& values);

struct EvaluationReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> iou;
  std::vector<std::optional<double>> dice;
  MacroScores macro;

  std::string to_csv() const;
  std::string to_json() const;
};

EvaluationReport make_report(const ConfusionMatrix& cm, std::vector<std::string> class_names = {});

}  // namespace patchgraph
