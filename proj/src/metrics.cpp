// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/metrics.hpp"

#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "patchgraph/errors.hpp"

namespace patchgraph {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : c_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t n) {
  if (truth >= c_ || pred >= c_)
    throw EvaluationError("class index out of range: truth " + std::to_string(truth) + ", pred " +
                          std::to_string(pred) + ", classes " + std::to_string(c_));
  counts_[truth * c_ + pred] += n;
}

void ConfusionMatrix::accumulate(const LabelMask& truth, const LabelMask& pred) {
  if (truth.height != pred.height || truth.width != pred.width)
    throw DimensionError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " does not match ground truth " + std::to_string(truth.height) + "x" +
                         std::to_string(truth.width));
  for (std::size_t i = 0; i < truth.pixels.size(); ++i) {
    if (truth.pixels[i] == kIgnoreLabel) continue;
    add(truth.pixels[i], pred.pixels[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.c_ != c_) throw DimensionError("cannot merge confusion matrices with different class counts");
  for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += other.counts_[k];
}

std::uint64_t ConfusionMatrix::true_positives(std::size_t c) const { return at(c, c); }

std::uint64_t ConfusionMatrix::false_positives(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < c_; ++t)
    if (t != c) s += at(t, c);
  return s;
}

std::uint64_t ConfusionMatrix::false_negatives(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < c_; ++p)
    if (p != c) s += at(c, p);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto v : counts_) s += v;
  return s;
}

std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(cm.num_classes());
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const double tp = static_cast<double>(cm.true_positives(c));
    const double denom = tp + static_cast<double>(cm.false_positives(c) + cm.false_negatives(c));
    if (denom > 0.0) out[c] = tp / denom;
  }
  return out;
}

std::vector<std::optional<double>> per_class_dice(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(cm.num_classes());
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const double tp = static_cast<double>(cm.true_positives(c));
    const double denom = 2.0 * tp + static_cast<double>(cm.false_positives(c) + cm.false_negatives(c));
    if (denom > 0.0) out[c] = 2.0 * tp / denom;
  }
  return out;
}

double macro_mean(const std::vector<std::optional<double>>& values) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& v : values)
    if (v) {
      s += *v;
      ++n;
    }
  if (n == 0) throw EvaluationError("no class is present in either ground truth or prediction");
  return s / static_cast<double>(n);
}

MacroScores macro_means(const ConfusionMatrix& cm) {
  const auto iou = per_class_iou(cm);
  MacroScores m;
  m.miou = macro_mean(iou);
  m.mdice = macro_mean(per_class_dice(cm));
  for (const auto& v : iou) m.classes_scored += v.has_value() ? 1 : 0;
  return m;
}

EvaluationReport make_report(const ConfusionMatrix& cm, std::vector<std::string> class_names) {
  if (class_names.empty())
    for (std::size_t c = 0; c < cm.num_classes(); ++c) class_names.push_back("class_" + std::to_string(c));
  if (class_names.size() != cm.num_classes())
    throw DimensionError("got " + std::to_string(class_names.size()) + " class names for " +
                         std::to_string(cm.num_classes()) + " classes");
  EvaluationReport r;
  r.class_names = std::move(class_names);
  r.iou = per_class_iou(cm);
  r.dice = per_class_dice(cm);
  r.macro = macro_means(cm);
  return r;
}

std::string EvaluationReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  os << "class,iou,dice\n";
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    os << class_names[c] << ',';
    if (iou[c]) os << *iou[c];
    os << ',';
    if (dice[c]) os << *dice[c];
    os << '\n';
  }
  os << "mean," << macro.miou << ',' << macro.mdice << '\n';
  return os.str();
}

std::string EvaluationReport::to_json() const {
  nlohmann::json j;
  j["miou"] = macro.miou;
  j["mdice"] = macro.mdice;
  j["classes_scored"] = macro.classes_scored;
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    nlohmann::json e;
    e["class"] = class_names[c];
    e["iou"] = iou[c] ? nlohmann::json(*iou[c]) : nlohmann::json(nullptr);
    e["dice"] = dice[c] ? nlohmann::json(*dice[c]) : nlohmann::json(nullptr);
    per.push_back(e);
  }
  j["per_class"] = per;
  return j.dump(2);
}

}  // namespace patchgraph
