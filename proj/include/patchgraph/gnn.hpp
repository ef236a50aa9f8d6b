// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

// Message-passing layers and the two segmentation models:
//   * GCNII-6: H' = relu(A [(1 - alpha) H + alpha H0] W) on the symmetric
//     normalized hybrid graph, H0 retained for every layer.
//   * GAT-DGG: multi-head attention restricted to the hybrid graph's support,
//     each edge gated by sigmoid(f_MLP([h_i, h_j])).
// plus a per-node linear classifier used as the no-graph baseline.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchgraph/autodiff.hpp"
#include "patchgraph/graphbuild.hpp"
#include "patchgraph/sparse_graph.hpp"

namespace patchgraph {

// --- generic message passing ---------------------------------------------------

enum class Aggregator { sum, mean, max };

/// Accepts "sum", "mean" or "max"; anything else is not permutation-invariant
/// as far as this library knows and raises ContractError.
Aggregator parse_aggregator(std::string_view name);

using MessageFn = std::function<std::vector<double>(std::span<const double> h_i, std::span<const double> h_j, double a_ij)>;
using UpdateFn = std::function<std::vector<double>(std::span<const double> h_i, std::span<const double> aggregated)>;

/// h_i' = update(h_i, AGG_{j in N(i)} message(h_i, h_j, A_ij)). Empty
/// neighbourhoods aggregate to zeros of the input width.
Tensor message_pass(const Tensor& h, const SparseGraph& adj, const MessageFn& message, Aggregator aggregator,
                    const UpdateFn& update);

// --- differentiable layers -----------------------------------------------------

enum class Activation { identity, relu };

Var activate(Var x, Activation act);

/// act(A h W) with A from sym_normalize.
Var gcn_layer(Var h, const SparseGraph& adj_sym, Var w, Activation act = Activation::relu);

/// act(A [(1 - alpha) h_l + alpha h_0] W_l). alpha outside [0, 1] is a
/// ConfigError.
Var gcnii_layer(Var h_l, Var h_0, const SparseGraph& adj_sym, Var w_l, double alpha,
                Activation act = Activation::relu);

/// Copy of `graph` with a self-loop (weight 1) in every row that lacks one.
SparseGraph with_self_loops(const SparseGraph& graph);

/// Attention over the support of `support` (which must already contain
/// self-loops): e_ij = leaky_relu(a_src.(W h)_i + a_dst.(W h)_j, 0.2),
/// softmax over each row. Returns [E x heads]. w: [d_in x heads*f],
/// attn_src/attn_dst: [heads x f]. When `transformed` is given it receives W h.
Var gat_attention(Var h, const SparseGraph& support, Var w, Var attn_src, Var attn_dst, Var* transformed = nullptr);

/// Gate MLP f([h_i, h_j]) = w2 . relu(W1 [h_i; h_j] + b1) + b2 with W1 split
/// column-wise into w_src / w_dst, so the first layer is evaluated per node.
struct GateParams {
  Var w_src;  // d_in x hidden
  Var w_dst;  // d_in x hidden
  Var b1;     // 1 x hidden
  Var w2;     // hidden x 1
  Var b2;     // 1 x 1
};

/// Raw gate logits g_ij, [E x 1].
Var gate_logits(Var h, const SparseGraph& support, const GateParams& gate);

/// A_dyn (E x heads) times sigmoid(g_ij) broadcast over heads.
Var dgg_gate(Var h, Var a_dyn, const SparseGraph& support, const GateParams& gate);

struct GatLayerParams {
  Var w;
  Var attn_src;
  Var attn_dst;
  GateParams gate;
};

struct GatLayerOutput {
  Var h;
  Var attention;  // A_dyn, E x heads
  Var gated;      // gated adjacency, E x heads
};

/// One GAT-DGG layer: act(sum_j gated_ij W h_j), heads concatenated or averaged.
GatLayerOutput gat_dgg_layer(Var h, const SparseGraph& support, const GatLayerParams& params, bool concat_heads,
                             Activation act = Activation::relu);

// --- parameters ---------------------------------------------------------------

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered name -> tensor store; order is creation order and defines the
/// checkpoint and optimizer layout.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t total_values() const;
  std::vector<NamedTensor>& items() noexcept { return items_; }
  const std::vector<NamedTensor>& items() const noexcept { return items_; }

 private:
  std::vector<NamedTensor> items_;
};

/// Parameters recorded as leaves on one tape, in ParameterSet order.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterSet& params, bool requires_grad = true);
  /// Uses caller-made vars, one per parameter in order (shapes must match).
  BoundParameters(const ParameterSet& params, std::vector<Var> vars);
  Var operator[](std::string_view name) const;
  const std::vector<Var>& vars() const noexcept { return vars_; }

 private:
  const ParameterSet* params_;
  std::vector<Var> vars_;
};

// --- models --------------------------------------------------------------------

enum class ModelVariant : std::uint8_t { gcnii = 0, gat_dgg = 1, linear = 2 };

std::string_view to_string(ModelVariant variant);
ModelVariant parse_model_variant(std::string_view name);

struct ModelSpec {
  ModelVariant variant = ModelVariant::gcnii;
  std::size_t input_dim = 0;
  std::size_t hidden = 64;
  std::size_t num_classes = 2;
  std::size_t layers = 6;  // GCNII depth; GAT-DGG uses 2
  std::size_t heads = 4;
  double alpha = 0.1;

  void validate() const;
};

/// Defaults per variant: GCNII 6 layers, GAT-DGG 2 layers x 4 heads.
ModelSpec default_spec(ModelVariant variant, std::size_t input_dim, std::size_t num_classes, std::size_t hidden = 64);

struct ForwardResult {
  Var logits;                  // N x C
  std::vector<Var> gated;      // GAT-DGG: per-layer gated adjacency (E x heads)
  std::vector<Var> attention;  // GAT-DGG: per-layer A_dyn
};

class Model {
 public:
  /// Weights uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero except the
  /// gate MLP output bias, which starts at +2 (gates nearly open).
  static Model create(const ModelSpec& spec, std::uint64_t seed);
  static Model from_parameters(const ModelSpec& spec, ParameterSet params);

  const ModelSpec& spec() const noexcept { return spec_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  /// Normalization the static graph must be built with.
  Normalization graph_normalization() const noexcept;

  /// Graph the forward pass consumes: GAT-DGG inserts self-loops into the
  /// attention support; other variants use the graph as given. The result must
  /// outlive any tape the forward pass records on.
  SparseGraph prepare_graph(const SparseGraph& graph) const;

  ForwardResult forward(const BoundParameters& params, Var features, const SparseGraph& prepared) const;

  /// Logits without gradient tracking.
  Tensor predict_logits(const Tensor& features, const SparseGraph& prepared) const;

 private:
  Model(ModelSpec spec, ParameterSet params) : spec_(spec), params_(std::move(params)) {}

  ModelSpec spec_;
  ParameterSet params_;
};

// --- checkpoints ---------------------------------------------------------------

/// "PGCK", u16 version, u8 variant, u32 layer count, u32 tensor count, then per
/// tensor: u16 name length, name bytes, u8 rank (2), u32 dims, f64 data.
/// Model hyper-parameters travel as "meta.*" tensors; `extras` (optimizer
/// state, step counter) are appended after the model tensors.
struct Checkpoint {
  ModelSpec spec;
  ParameterSet params;
  std::vector<NamedTensor> extras;

  Model model() const { return Model::from_parameters(spec, params); }
  const Tensor* extra(std::string_view name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Model& model, const std::vector<NamedTensor>& extras = {});
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const Model& model,
                      const std::vector<NamedTensor>& extras = {});
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace patchgraph
