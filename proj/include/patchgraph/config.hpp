// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

// Run configuration shared by the command-line tools. Keys are dotted
// "section.name" strings; a file is either `key = value` lines ('#' starts a
// comment) or a JSON object whose nested objects flatten to dotted keys.
// Unknown keys are a ConfigError.

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "patchgraph/dataio.hpp"
#include "patchgraph/gnn.hpp"
#include "patchgraph/graphbuild.hpp"
#include "patchgraph/losses.hpp"
#include "patchgraph/trainer.hpp"

namespace patchgraph {

enum class ClassWeighting { cb_sqrt, uniform };

struct ModelOptions {
  ModelVariant variant = ModelVariant::gcnii;
  std::size_t hidden = 64;
  std::size_t layers = 0;  // 0: the variant's default depth
  std::size_t heads = 4;
  double alpha = 0.1;

  ModelSpec spec(std::size_t input_dim, std::size_t num_classes) const;
};

struct RunConfig {
  GraphConfig graph;
  std::optional<Normalization> normalization;  // unset: the model's own
  LossWeights loss = LossWeights::composite();
  ClassWeighting class_weights = ClassWeighting::cb_sqrt;
  TrainConfig training;
  ModelOptions model;
  SynthConfig synth;

  /// Applies one `key = value` assignment.
  void set(std::string_view key, std::string_view value);
  /// Applies every assignment of a key=value or JSON document.
  void merge_text(std::string_view text);
  void merge_file(const std::filesystem::path& path);
  /// Sets both the training and the synthetic-data seed.
  void set_seed(std::uint64_t seed);

  /// Every key with its effective value, in a fixed order. Feeding the
  /// result back through merge_text reproduces this configuration.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string echo() const;

  void validate() const;

  Normalization normalization_for(const Model& model) const;
  ClassWeightVector weights_for(std::span<const std::uint64_t> histogram) const;
};

/// Keys accepted by RunConfig::set.
std::vector<std::string> config_keys();

}  // namespace patchgraph
