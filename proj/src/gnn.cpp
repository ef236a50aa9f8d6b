// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "patchgraph/binary_io.hpp"
#include "patchgraph/errors.hpp"
#include "patchgraph/random.hpp"

namespace patchgraph {

// --- generic message passing ---------------------------------------------------

Aggregator parse_aggregator(std::string_view name) {
  if (name == "sum") return Aggregator::sum;
  if (name == "mean") return Aggregator::mean;
  if (name == "max") return Aggregator::max;
  throw ContractError("aggregator '" + std::string(name) + "' is not a permutation-invariant reduction (sum|mean|max)");
}

Tensor message_pass(const Tensor& h, const SparseGraph& adj, const MessageFn& message, Aggregator aggregator,
                    const UpdateFn& update) {
  if (h.rows() != adj.num_nodes())
    throw DimensionError("message_pass: adjacency has " + std::to_string(adj.num_nodes()) + " rows, h is " +
                         h.shape().str());
  const auto cols = adj.columns();
  const auto w = adj.weights();
  std::vector<std::vector<double>> out_rows(h.rows());
  std::size_t out_dim = 0;
  for (std::size_t i = 0; i < h.rows(); ++i) {
    std::vector<double> acc;
    std::size_t count = 0;
    for (std::size_t e = adj.row_begin(i); e < adj.row_end(i); ++e) {
      std::vector<double> m = message(h.row(i), h.row(cols[e]), w[e]);
      if (count == 0) {
        acc = std::move(m);
      } else {
        if (m.size() != acc.size()) throw DimensionError("message_pass: messages of differing width");
        for (std::size_t c = 0; c < acc.size(); ++c)
          acc[c] = aggregator == Aggregator::max ? std::max(acc[c], m[c]) : acc[c] + m[c];
      }
      ++count;
    }
    if (count == 0) acc.assign(h.cols(), 0.0);
    if (aggregator == Aggregator::mean && count > 0)
      for (double& v : acc) v /= static_cast<double>(count);
    out_rows[i] = update(h.row(i), acc);
    if (i == 0) out_dim = out_rows[i].size();
    if (out_rows[i].size() != out_dim) throw DimensionError("message_pass: update produced differing widths");
  }
  Tensor out(h.rows(), out_dim);
  for (std::size_t i = 0; i < h.rows(); ++i) std::copy(out_rows[i].begin(), out_rows[i].end(), out.row(i).begin());
  return out;
}

// --- layers -----------------------------------------------------------------------

Var activate(Var x, Activation act) { return act == Activation::relu ? relu(x) : x; }

Var gcn_layer(Var h, const SparseGraph& adj_sym, Var w, Activation act) {
  return activate(matmul(spmm(adj_sym, h), w), act);
}

Var gcnii_layer(Var h_l, Var h_0, const SparseGraph& adj_sym, Var w_l, double alpha, Activation act) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("gcnii alpha must lie in [0, 1]");
  if (h_l.shape() != h_0.shape())
    throw DimensionError("gcnii_layer: h_l " + h_l.shape().str() + " vs h_0 " + h_0.shape().str());
  Var mixed = add(scale(h_l, 1.0 - alpha), scale(h_0, alpha));
  return activate(matmul(spmm(adj_sym, mixed), w_l), act);
}

SparseGraph with_self_loops(const SparseGraph& graph) {
  const std::size_t n = graph.num_nodes();
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<std::uint32_t> cols;
  std::vector<double> weights;
  std::vector<EdgeType> types;
  cols.reserve(graph.num_edges() + n);
  const auto gc = graph.columns();
  const auto gw = graph.weights();
  const auto gt = graph.types();
  for (std::size_t i = 0; i < n; ++i) {
    bool has_self = graph.has_edge(i, i);
    bool placed = has_self;
    for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
      if (!placed && gc[e] > i) {
        cols.push_back(static_cast<std::uint32_t>(i));
        weights.push_back(1.0);
        types.push_back(EdgeType::self_loop);
        placed = true;
      }
      cols.push_back(gc[e]);
      weights.push_back(gw[e]);
      types.push_back(gt[e]);
    }
    if (!placed) {
      cols.push_back(static_cast<std::uint32_t>(i));
      weights.push_back(1.0);
      types.push_back(EdgeType::self_loop);
    }
    offsets[i + 1] = cols.size();
  }
  return SparseGraph(n, std::move(offsets), std::move(cols), std::move(weights), std::move(types));
}

Var gat_attention(Var h, const SparseGraph& support, Var w, Var attn_src, Var attn_dst, Var* transformed) {
  for (std::size_t i = 0; i < support.num_nodes(); ++i)
    if (support.degree(i) == 0)
      throw StructuralError("gat_attention: node " + std::to_string(i) + " has an empty neighbourhood");
  Var wh = matmul(h, w);
  if (transformed) *transformed = wh;
  Var s_src = head_dot(wh, attn_src);
  Var s_dst = head_dot(wh, attn_dst);
  Var scores = leaky_relu(gather_edge_sum(support, s_src, s_dst), 0.2);
  return segment_softmax(support, scores);
}

Var gate_logits(Var h, const SparseGraph& support, const GateParams& gate) {
  Var u = matmul(h, gate.w_src);
  Var v = matmul(h, gate.w_dst);
  return edge_mlp(support, u, v, gate.b1, gate.w2, gate.b2);
}

Var dgg_gate(Var h, Var a_dyn, const SparseGraph& support, const GateParams& gate) {
  Var g = sigmoid(gate_logits(h, support, gate));
  return hadamard(a_dyn, repeat_cols(g, a_dyn.shape().cols));
}

GatLayerOutput gat_dgg_layer(Var h, const SparseGraph& support, const GatLayerParams& params, bool concat_heads,
                             Activation act) {
  Var wh;
  Var attention = gat_attention(h, support, params.w, params.attn_src, params.attn_dst, &wh);
  Var gated = dgg_gate(h, attention, support, params.gate);
  Var out = spmm_edges(support, gated, wh);
  if (!concat_heads) out = mean_col_blocks(out, attention.shape().cols);
  return {activate(out, act), attention, gated};
}

// --- parameters ------------------------------------------------------------------

void ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  items_.push_back({std::move(name), std::move(value)});
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const NamedTensor& t) { return t.name == name; });
}

const Tensor& ParameterSet::at(std::string_view name) const {
  for (const auto& t : items_)
    if (t.name == name) return t.value;
  throw ContractError("unknown parameter " + std::string(name));
}

Tensor& ParameterSet::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParameterSet&>(*this).at(name));
}

std::size_t ParameterSet::total_values() const {
  std::size_t n = 0;
  for (const auto& t : items_) n += t.value.size();
  return n;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params, bool requires_grad) : params_(&params) {
  vars_.reserve(params.size());
  for (const auto& t : params.items()) vars_.push_back(tape.leaf(t.value, requires_grad));
}

BoundParameters::BoundParameters(const ParameterSet& params, std::vector<Var> vars)
    : params_(&params), vars_(std::move(vars)) {
  if (vars_.size() != params.size())
    throw ContractError("expected " + std::to_string(params.size()) + " parameter vars, got " +
                        std::to_string(vars_.size()));
  for (std::size_t k = 0; k < vars_.size(); ++k)
    if (vars_[k].shape() != params.items()[k].value.shape())
      throw DimensionError("parameter " + params.items()[k].name + " expects " +
                           params.items()[k].value.shape().str() + ", got " + vars_[k].shape().str());
}

Var BoundParameters::operator[](std::string_view name) const {
  const auto& items = params_->items();
  for (std::size_t k = 0; k < items.size(); ++k)
    if (items[k].name == name) return vars_[k];
  throw ContractError("unknown parameter " + std::string(name));
}

// --- models ------------------------------------------------------------------------

std::string_view to_string(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::gcnii: return "gcnii";
    case ModelVariant::gat_dgg: return "gat_dgg";
    case ModelVariant::linear: return "linear";
  }
  return "unknown";
}

ModelVariant parse_model_variant(std::string_view name) {
  if (name == "gcnii") return ModelVariant::gcnii;
  if (name == "gat_dgg" || name == "gat-dgg") return ModelVariant::gat_dgg;
  if (name == "linear") return ModelVariant::linear;
  throw ConfigError("unknown model '" + std::string(name) + "' (expected gcnii|gat_dgg|linear)");
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model input_dim must be positive");
  if (num_classes < 2) throw ConfigError("at least two classes are required");
  if (variant == ModelVariant::linear) return;
  if (hidden == 0 || layers == 0) throw ConfigError("hidden width and layer count must be positive");
  if (variant == ModelVariant::gcnii && !(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("gcnii alpha must lie in [0, 1]");
  if (variant == ModelVariant::gat_dgg && (heads == 0 || hidden % heads != 0))
    throw ConfigError("hidden width must be divisible by the number of heads");
}

ModelSpec default_spec(ModelVariant variant, std::size_t input_dim, std::size_t num_classes, std::size_t hidden) {
  ModelSpec s;
  s.variant = variant;
  s.input_dim = input_dim;
  s.num_classes = num_classes;
  s.hidden = hidden;
  s.layers = variant == ModelVariant::gat_dgg ? 2 : variant == ModelVariant::gcnii ? 6 : 1;
  return s;
}

namespace {

Tensor uniform(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor fan_in_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  return uniform(rng, fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

std::string layer_name(const char* family, std::size_t l, const char* leaf) {
  return std::string(family) + "." + std::to_string(l) + "." + leaf;
}

}  // namespace

Model Model::create(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParameterSet p;
  const std::size_t d = spec.input_dim, h = spec.hidden, c = spec.num_classes;
  switch (spec.variant) {
    case ModelVariant::linear:
      p.add("output.weight", fan_in_uniform(rng, d, c));
      p.add("output.bias", Tensor(1, c));
      break;
    case ModelVariant::gcnii:
      p.add("input.weight", fan_in_uniform(rng, d, h));
      p.add("input.bias", Tensor(1, h));
      for (std::size_t l = 0; l < spec.layers; ++l) p.add(layer_name("gcnii", l, "weight"), fan_in_uniform(rng, h, h));
      p.add("output.weight", fan_in_uniform(rng, h, c));
      p.add("output.bias", Tensor(1, c));
      break;
    case ModelVariant::gat_dgg:
      p.add("input.weight", fan_in_uniform(rng, d, h));
      p.add("input.bias", Tensor(1, h));
      for (std::size_t l = 0; l < spec.layers; ++l) {
        const bool last = l + 1 == spec.layers;
        const std::size_t f = last ? h : h / spec.heads;
        const double attn_bound = 1.0 / std::sqrt(static_cast<double>(2 * f));
        p.add(layer_name("gat", l, "weight"), fan_in_uniform(rng, h, spec.heads * f));
        p.add(layer_name("gat", l, "attn_src"), uniform(rng, spec.heads, f, attn_bound));
        p.add(layer_name("gat", l, "attn_dst"), uniform(rng, spec.heads, f, attn_bound));
        const double gate_bound = 1.0 / std::sqrt(static_cast<double>(2 * h));
        p.add(layer_name("gat", l, "gate.w_src"), uniform(rng, h, h, gate_bound));
        p.add(layer_name("gat", l, "gate.w_dst"), uniform(rng, h, h, gate_bound));
        p.add(layer_name("gat", l, "gate.b1"), Tensor(1, h));
        p.add(layer_name("gat", l, "gate.w2"), fan_in_uniform(rng, h, 1));
        p.add(layer_name("gat", l, "gate.b2"), Tensor(1, 1, 2.0));
      }
      p.add("output.weight", fan_in_uniform(rng, h, c));
      p.add("output.bias", Tensor(1, c));
      break;
  }
  return Model(spec, std::move(p));
}

Model Model::from_parameters(const ModelSpec& spec, ParameterSet params) {
  spec.validate();
  // Shapes must match a freshly created model of the same spec.
  const Model reference = create(spec, 0);
  const auto& want = reference.parameters().items();
  if (want.size() != params.size()) throw ConfigError("parameter set does not match the model specification");
  for (std::size_t k = 0; k < want.size(); ++k) {
    const auto& got = params.items()[k];
    if (got.name != want[k].name || got.value.shape() != want[k].value.shape())
      throw ConfigError("parameter '" + got.name + "' does not match expected '" + want[k].name + "' " +
                        want[k].value.shape().str());
  }
  return Model(spec, std::move(params));
}

Normalization Model::graph_normalization() const noexcept {
  return spec_.variant == ModelVariant::gat_dgg ? Normalization::row : Normalization::sym;
}

SparseGraph Model::prepare_graph(const SparseGraph& graph) const {
  return spec_.variant == ModelVariant::gat_dgg ? with_self_loops(graph) : graph;
}

ForwardResult Model::forward(const BoundParameters& params, Var features, const SparseGraph& prepared) const {
  if (features.shape().cols != spec_.input_dim)
    throw DimensionError("model expects " + std::to_string(spec_.input_dim) + " input features, got " +
                         features.shape().str());
  if (spec_.variant != ModelVariant::linear && prepared.num_nodes() != features.shape().rows)
    throw DimensionError("graph has " + std::to_string(prepared.num_nodes()) + " nodes, features " +
                         features.shape().str());
  ForwardResult result;
  if (spec_.variant == ModelVariant::linear) {
    result.logits = add_bias(matmul(features, params["output.weight"]), params["output.bias"]);
    return result;
  }
  Var h0 = relu(add_bias(matmul(features, params["input.weight"]), params["input.bias"]));
  Var h = h0;
  if (spec_.variant == ModelVariant::gcnii) {
    for (std::size_t l = 0; l < spec_.layers; ++l)
      h = gcnii_layer(h, h0, prepared, params[layer_name("gcnii", l, "weight")], spec_.alpha);
  } else {
    for (std::size_t l = 0; l < spec_.layers; ++l) {
      GatLayerParams lp{params[layer_name("gat", l, "weight")],
                        params[layer_name("gat", l, "attn_src")],
                        params[layer_name("gat", l, "attn_dst")],
                        {params[layer_name("gat", l, "gate.w_src")], params[layer_name("gat", l, "gate.w_dst")],
                         params[layer_name("gat", l, "gate.b1")], params[layer_name("gat", l, "gate.w2")],
                         params[layer_name("gat", l, "gate.b2")]}};
      const bool last = l + 1 == spec_.layers;
      GatLayerOutput out = gat_dgg_layer(h, prepared, lp, /*concat_heads=*/!last);
      h = out.h;
      result.attention.push_back(out.attention);
      result.gated.push_back(out.gated);
    }
  }
  result.logits = add_bias(matmul(h, params["output.weight"]), params["output.bias"]);
  return result;
}

Tensor Model::predict_logits(const Tensor& features, const SparseGraph& prepared) const {
  Tape tape;
  BoundParameters bound(tape, params_, /*requires_grad=*/false);
  return forward(bound, tape.constant(features), prepared).logits.value();
}

// --- checkpoints ---------------------------------------------------------------------

namespace {
constexpr std::string_view kCheckpointMagic = "PGCK";
constexpr std::uint16_t kCheckpointVersion = 1;

void put_tensor(io::ByteWriter& w, const std::string& name, const Tensor& t) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ContractError("tensor name too long");
  w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.put<std::uint8_t>(2);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
  for (double v : t.data()) w.put<double>(v);
}

NamedTensor get_tensor(io::ByteReader& r) {
  NamedTensor t;
  const auto len = r.get<std::uint16_t>("tensor name length");
  t.name = r.string(len, "tensor name");
  const auto rank = r.get<std::uint8_t>("tensor rank");
  if (rank != 2) r.fail("tensor '" + t.name + "' has unsupported rank " + std::to_string(rank));
  const std::size_t rows = r.get<std::uint32_t>("rows");
  const std::size_t cols = r.get<std::uint32_t>("cols");
  r.need(rows * cols * 8, "tensor data");
  std::vector<double> data(rows * cols);
  for (double& v : data) v = r.get<double>("tensor value");
  t.value = Tensor(rows, cols, std::move(data));
  return t;
}

}  // namespace

const Tensor* Checkpoint::extra(std::string_view name) const {
  for (const auto& t : extras)
    if (t.name == name) return &t.value;
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Model& model, const std::vector<NamedTensor>& extras) {
  const ModelSpec& s = model.spec();
  std::vector<NamedTensor> meta = {
      {"meta.input_dim", Tensor::scalar(static_cast<double>(s.input_dim))},
      {"meta.hidden", Tensor::scalar(static_cast<double>(s.hidden))},
      {"meta.num_classes", Tensor::scalar(static_cast<double>(s.num_classes))},
      {"meta.heads", Tensor::scalar(static_cast<double>(s.heads))},
      {"meta.alpha", Tensor::scalar(s.alpha)},
  };
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.variant));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.layers));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size() + model.parameters().size() + extras.size()));
  for (const auto& t : meta) put_tensor(w, t.name, t.value);
  for (const auto& t : model.parameters().items()) put_tensor(w, t.name, t.value);
  for (const auto& t : extras) put_tensor(w, t.name, t.value);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "checkpoint");
  r.expect_magic(kCheckpointMagic);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  const auto variant = r.get<std::uint8_t>("model variant");
  if (variant > 2) r.fail("unknown model variant tag " + std::to_string(variant));
  Checkpoint ck;
  ck.spec.variant = static_cast<ModelVariant>(variant);
  ck.spec.layers = r.get<std::uint32_t>("layer count");
  const std::size_t count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> tensors;
  for (std::size_t k = 0; k < count; ++k) tensors.push_back(get_tensor(r));
  if (r.remaining() != 0) r.fail("trailing bytes after checkpoint tensors");

  auto meta = [&](std::string_view name) -> double {
    for (const auto& t : tensors)
      if (t.name == name) return t.value.item();
    throw FormatError("checkpoint: missing " + std::string(name), r.offset());
  };
  ck.spec.input_dim = static_cast<std::size_t>(meta("meta.input_dim"));
  ck.spec.hidden = static_cast<std::size_t>(meta("meta.hidden"));
  ck.spec.num_classes = static_cast<std::size_t>(meta("meta.num_classes"));
  ck.spec.heads = static_cast<std::size_t>(meta("meta.heads"));
  ck.spec.alpha = meta("meta.alpha");

  const Model reference = Model::create(ck.spec, 0);
  for (auto& t : tensors) {
    if (t.name.starts_with("meta.")) continue;
    if (reference.parameters().contains(t.name) && !ck.params.contains(t.name))
      ck.params.add(t.name, std::move(t.value));
    else
      ck.extras.push_back(std::move(t));
  }
  try {
    (void)Model::from_parameters(ck.spec, ck.params);
  } catch (const ConfigError& err) {
    throw FormatError(std::string("checkpoint: ") + err.what(), r.offset());
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Model& model, const std::vector<NamedTensor>& extras) {
  io::write_file(path, serialize_checkpoint(model, extras));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(io::read_file(path)); }

}  // namespace patchgraph
