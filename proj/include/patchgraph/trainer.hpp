// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchgraph/dataio.hpp"
#include "patchgraph/decoder.hpp"
#include "patchgraph/gnn.hpp"
#include "patchgraph/losses.hpp"
#include "patchgraph/metrics.hpp"

namespace patchgraph {

enum class Schedule { cosine, onecycle };

std::string_view to_string(Schedule schedule);
Schedule parse_schedule(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 100;
  double base_lr = 5e-5;  // peak rate for one-cycle
  double min_lr = 0.0;    // cosine floor
  Schedule schedule = Schedule::onecycle;
  double pct_start = 0.3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;  // max global L2 norm

  void validate() const;
};

/// min + (base - min) (1 + cos(pi step / total)) / 2.
double cosine_schedule(std::size_t step, std::size_t total, double base_lr, double min_lr = 0.0);

/// Cosine ramp from max/div to max over pct_start * total steps, then cosine
/// decay to max/final_div at step == total.
double onecycle_schedule(std::size_t step, std::size_t total, double max_lr, double pct_start = 0.3, double div = 25.0,
                         double final_div = 1e4);

double learning_rate(const TrainConfig& config, std::size_t step, std::size_t total);

/// First and second moments, one tensor per parameter in ParameterSet order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParameterSet& params);
};

/// Bias-corrected AdamW with decoupled decay:
///   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + weight_decay p).
/// A non-finite gradient raises NumericError naming the parameter.
void adamw_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state, double lr,
                const TrainConfig& config);

/// Rescales so the global L2 norm is at most max_norm; returns the norm
/// before clipping.
double clip_gradients(std::span<Tensor> grads, double max_norm);

/// A frame ready for the forward pass: features, the model-specific graph
/// (normalized and prepared), and the supervision rasters.
struct PreparedFrame {
  std::string name;
  std::size_t height_s = 0;
  std::size_t width_s = 0;
  Tensor features;
  SparseGraph graph;
  LabelMask mask;
  std::optional<GrayImage> image;
};

/// Weighted (not normalized) hybrid graph of one frame.
SparseGraph frame_graph(const Frame& frame, const GraphConfig& config);

PreparedFrame prepare_frame(const Frame& frame, const SparseGraph& weighted, Normalization normalization,
                            const Model& model);

/// Pixel posteriors: node softmax, then bilinear upsampling to the mask size.
ClassPosteriors predict_posteriors(const Model& model, const PreparedFrame& frame);
LabelMask predict_mask(const Model& model, const PreparedFrame& frame);

/// Dataset-pooled confusion matrix.
ConfusionMatrix evaluate(const Model& model, std::span<const PreparedFrame> frames);

struct HistoryRow {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_miou = 0.0;
  double val_mdice = 0.0;
  double lr = 0.0;  // rate used by the epoch's last step
};

std::string history_csv(std::span<const HistoryRow> rows);

/// Optimizer position carried across a resume.
struct ResumeState {
  AdamState adam;
  std::size_t epochs_done = 0;
  double best_val_miou = -1.0;
  std::optional<Model> best;
};

/// Checkpoint extras describing `state` ("state.*", "adam.m.*", "adam.v.*").
std::vector<NamedTensor> trainer_extras(const ParameterSet& params, const AdamState& adam, std::size_t epochs_done,
                                        double best_val_miou);
/// Inverse of trainer_extras; ConfigError when the checkpoint has no
/// optimizer state.
ResumeState resume_state(const Checkpoint& checkpoint);

struct TrainResult {
  Model best;
  Model last;
  double best_val_miou = -1.0;
  std::size_t best_epoch = 0;
  std::vector<HistoryRow> history;
  AdamState adam;
  std::size_t epochs_done = 0;
};

struct TrainHooks {
  std::function<void(const HistoryRow&)> on_epoch;
  /// Called after each epoch with the current (last) model and state.
  std::function<void(const Model& last, const AdamState& adam, std::size_t epochs_done, double best_val_miou,
                     const Model& best)>
      on_checkpoint;
};

/// One frame per step, frames shuffled per epoch from the seed; validation
/// mIoU after every epoch; the best-validation model is retained (earliest
/// epoch on ties). Empty splits are a ConfigError.
TrainResult train_loop(Model model, std::span<const PreparedFrame> train, std::span<const PreparedFrame> val,
                       const TrainConfig& config, const LossWeights& loss_weights,
                       const ClassWeightVector& class_weights, const TrainHooks& hooks = {},
                       const ResumeState* resume = nullptr);

}  // namespace patchgraph
