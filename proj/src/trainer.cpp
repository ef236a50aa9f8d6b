// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/trainer.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "patchgraph/decoder.hpp"
#include "patchgraph/errors.hpp"
#include "patchgraph/random.hpp"

namespace patchgraph {

std::string_view to_string(Schedule schedule) { return schedule == Schedule::cosine ? "cosine" : "onecycle"; }

Schedule parse_schedule(std::string_view name) {
  if (name == "cosine") return Schedule::cosine;
  if (name == "onecycle") return Schedule::onecycle;
  throw ConfigError("unknown schedule '" + std::string(name) + "' (expected cosine or onecycle)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive");
  if (!(min_lr >= 0.0) || min_lr > base_lr) throw ConfigError("min_lr must lie in [0, base_lr]");
  if (!(pct_start > 0.0 && pct_start < 1.0)) throw ConfigError("pct_start must lie in (0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be positive when set");
}

double cosine_schedule(std::size_t step, std::size_t total, double base_lr, double min_lr) {
  if (total == 0) return base_lr;
  const double t = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

double onecycle_schedule(std::size_t step, std::size_t total, double max_lr, double pct_start, double div,
                         double final_div) {
  const double initial = max_lr / div;
  const double final_lr = max_lr / final_div;
  if (total == 0) return initial;
  const double s = static_cast<double>(std::min(step, total));
  const double up = pct_start * static_cast<double>(total);
  if (s <= up) {
    const double t = up > 0.0 ? s / up : 1.0;
    return initial + (max_lr - initial) * 0.5 * (1.0 - std::cos(std::numbers::pi * t));
  }
  const double t = (s - up) / (static_cast<double>(total) - up);
  return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double learning_rate(const TrainConfig& config, std::size_t step, std::size_t total) {
  return config.schedule == Schedule::cosine ? cosine_schedule(step, total, config.base_lr, config.min_lr)
                                             : onecycle_schedule(step, total, config.base_lr, config.pct_start);
}

AdamState AdamState::zeros_like(const ParameterSet& params) {
  AdamState s;
  for (const auto& p : params.items()) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

void adamw_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state, double lr,
                const TrainConfig& config) {
  auto& items = params.items();
  if (grads.size() != items.size() || state.m.size() != items.size() || state.v.size() != items.size())
    throw DimensionError("adamw_step: parameter, gradient and moment counts differ");
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (grads[k].shape() != items[k].value.shape() || state.m[k].shape() != items[k].value.shape())
      throw DimensionError("adamw_step: shape mismatch for '" + items[k].name + "'");
    for (double g : grads[k].data())
      if (!std::isfinite(g)) throw NumericError("gradient of '" + items[k].name + "' is not finite");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto p = items[k].value.data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * (m_hat / (std::sqrt(v_hat) + config.eps) + config.weight_decay * p[i]);
    }
  }
}

double clip_gradients(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g.data()) v *= f;
  }
  return norm;
}

SparseGraph frame_graph(const Frame& frame, const GraphConfig& config) { return build_hybrid_weights(frame.grid, config); }

PreparedFrame prepare_frame(const Frame& frame, const SparseGraph& weighted, Normalization normalization,
                            const Model& model) {
  if (frame.grid.dim() != model.spec().input_dim)
    throw DimensionError(frame.name + ": features have D = " + std::to_string(frame.grid.dim()) +
                         " but the model expects " + std::to_string(model.spec().input_dim));
  validate_mask(frame.mask, model.spec().num_classes);
  PreparedFrame p;
  p.name = frame.name;
  p.height_s = frame.grid.height_s;
  p.width_s = frame.grid.width_s;
  p.features = frame.grid.features;
  p.graph = model.prepare_graph(normalize(weighted, normalization));
  p.mask = frame.mask;
  p.image = frame.image;
  return p;
}

ClassPosteriors predict_posteriors(const Model& model, const PreparedFrame& frame) {
  const Tensor logits = model.predict_logits(frame.features, frame.graph);
  return bilinear_upsample(logits_to_grid(logits, frame.height_s, frame.width_s), frame.mask.height,
                           frame.mask.width);
}

LabelMask predict_mask(const Model& model, const PreparedFrame& frame) {
  return argmax_mask(predict_posteriors(model, frame));
}

ConfusionMatrix evaluate(const Model& model, std::span<const PreparedFrame> frames) {
  ConfusionMatrix cm(model.spec().num_classes);
  for (const auto& f : frames) cm.accumulate(f.mask, predict_mask(model, f));
  return cm;
}

std::string history_csv(std::span<const HistoryRow> rows) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_miou,val_mdice,lr\n";
  for (const auto& r : rows)
    os << r.epoch << ',' << r.train_loss << ',' << r.val_miou << ',' << r.val_mdice << ',' << r.lr << '\n';
  return os.str();
}

std::vector<NamedTensor> trainer_extras(const ParameterSet& params, const AdamState& adam, std::size_t epochs_done,
                                        double best_val_miou) {
  std::vector<NamedTensor> extras;
  extras.push_back({"state.step", Tensor::scalar(static_cast<double>(adam.step))});
  extras.push_back({"state.epochs_done", Tensor::scalar(static_cast<double>(epochs_done))});
  extras.push_back({"state.best_val_miou", Tensor::scalar(best_val_miou)});
  const auto& items = params.items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    extras.push_back({"adam.m." + items[k].name, adam.m.at(k)});
    extras.push_back({"adam.v." + items[k].name, adam.v.at(k)});
  }
  return extras;
}

ResumeState resume_state(const Checkpoint& checkpoint) {
  const Tensor* step = checkpoint.extra("state.step");
  const Tensor* epochs = checkpoint.extra("state.epochs_done");
  const Tensor* best = checkpoint.extra("state.best_val_miou");
  if (!step || !epochs || !best) throw ConfigError("checkpoint carries no optimizer state; cannot resume");
  ResumeState r;
  r.adam.step = static_cast<std::uint64_t>(step->item());
  r.epochs_done = static_cast<std::size_t>(epochs->item());
  r.best_val_miou = best->item();
  for (const auto& p : checkpoint.params.items()) {
    const Tensor* m = checkpoint.extra("adam.m." + p.name);
    const Tensor* v = checkpoint.extra("adam.v." + p.name);
    if (!m || !v || m->shape() != p.value.shape() || v->shape() != p.value.shape())
      throw ConfigError("checkpoint optimizer state for '" + p.name + "' is missing or malformed");
    r.adam.m.push_back(*m);
    r.adam.v.push_back(*v);
  }
  return r;
}

namespace {

double train_step(Model& model, const PreparedFrame& frame, const TrainConfig& config, const LossWeights& loss_weights,
                  const ClassWeightVector& class_weights, AdamState& adam, double lr) {
  Tape tape;
  BoundParameters bound(tape, model.parameters());
  Var x = tape.constant(frame.features);
  const ForwardResult fr = model.forward(bound, x, frame.graph);
  Var grid = logits_to_grid(fr.logits, frame.height_s, frame.width_s);
  Var full = bilinear_upsample(grid, frame.height_s, frame.width_s, frame.mask.height, frame.mask.width);
  const LossBreakdown loss =
      segmentation_loss(full, frame.mask, frame.image ? &*frame.image : nullptr, class_weights, loss_weights);
  const double value = loss.total.value().item();
  if (!std::isfinite(value)) throw NumericError(frame.name + ": loss is not finite");
  const GradientMap g = tape.backward(loss.total);
  std::vector<Tensor> grads;
  grads.reserve(bound.vars().size());
  for (Var v : bound.vars()) grads.push_back(g[v]);
  if (config.grad_clip) clip_gradients(grads, *config.grad_clip);
  adamw_step(model.parameters(), grads, adam, lr, config);
  return value;
}

}  // namespace

TrainResult train_loop(Model model, std::span<const PreparedFrame> train, std::span<const PreparedFrame> val,
                       const TrainConfig& config, const LossWeights& loss_weights,
                       const ClassWeightVector& class_weights, const TrainHooks& hooks, const ResumeState* resume) {
  config.validate();
  loss_weights.validate();
  if (train.empty()) throw ConfigError("training split is empty");
  if (val.empty()) throw ConfigError("validation split is empty");
  if (class_weights.values.size() != model.spec().num_classes)
    throw DimensionError("class weight count does not match the model's class count");

  AdamState adam = AdamState::zeros_like(model.parameters());
  std::size_t start_epoch = 0;
  double best_val = -1.0;
  std::optional<Model> best;
  if (resume) {
    if (resume->adam.m.size() != adam.m.size()) throw ConfigError("resume state does not match the model");
    adam = resume->adam;
    start_epoch = resume->epochs_done;
    best_val = resume->best_val_miou;
    best = resume->best;
  }
  TrainResult result{best ? *best : model, model, best_val, 0, {}, {}, 0};

  const std::size_t total_steps = config.epochs * train.size();
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(config.seed, 0x5eed0000ULL + epoch);
    rng.shuffle(std::span(order));
    double loss_sum = 0.0, lr = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t step = epoch * train.size() + k;
      lr = learning_rate(config, step, total_steps);
      loss_sum += train_step(model, train[order[k]], config, loss_weights, class_weights, adam, lr);
    }
    const MacroScores scores = macro_means(evaluate(model, val));
    HistoryRow row{epoch + 1, loss_sum / static_cast<double>(train.size()), scores.miou, scores.mdice, lr};
    result.history.push_back(row);
    if (scores.miou > best_val) {
      best_val = scores.miou;
      result.best = model;
      result.best_epoch = epoch + 1;
    }
    if (hooks.on_epoch) hooks.on_epoch(row);
    if (hooks.on_checkpoint) hooks.on_checkpoint(model, adam, epoch + 1, best_val, result.best);
  }
  result.best_val_miou = best_val;
  result.last = model;
  result.adam = adam;
  result.epochs_done = std::max(start_epoch, config.epochs);
  return result;
}

}  // namespace patchgraph
