// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "patchgraph/sparse_graph.hpp"

namespace patchgraph {

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill) : shape_{rows, cols}, data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : shape_{rows, cols}, data_(std::move(data)) {
  if (data_.size() != rows * cols)
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_.str());
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

double Tensor::item() const {
  if (shape_ != Shape{1, 1}) throw DimensionError("item() on non-scalar tensor " + shape_.str());
  return data_[0];
}

void Tensor::accumulate(const Tensor& other) {
  if (other.shape_ != shape_)
    throw DimensionError("cannot accumulate " + other.shape_.str() + " into " + shape_.str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

// --- dense kernels ------------------------------------------------------------

namespace dense {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ, " + a.shape().str() + " x " + b.shape().str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(m, n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  // a[m x k], b[m x n] -> out[k x n]
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = pb + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      double* orow = po + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  // a[m x n], b[k x n] -> out[m x k]; b is transposed once so the inner loop is contiguous.
  const std::size_t m = a.rows(), n = a.cols(), k = b.rows();
  const Tensor bt = transpose(b);
  const double* pa = a.data().data();
  const double* pb = bt.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double av = pa[i * n + j];
      const double* brow = pb + j * k;
      for (std::size_t p = 0; p < k; ++p) orow[p] += av * brow[p];
    }
  }
}

Tensor transpose(const Tensor& a) {
  Tensor t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : in) {
      if (std::isnan(v)) throw NumericError("softmax_rows: NaN in row " + std::to_string(r));
      mx = std::max(mx, v);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

Tensor spmm(const SparseGraph& graph, const Tensor& h) {
  if (h.rows() != graph.num_nodes())
    throw DimensionError("spmm: graph has " + std::to_string(graph.num_nodes()) + " nodes but h is " +
                         h.shape().str());
  const std::size_t d = h.cols();
  Tensor out(graph.num_nodes(), d);
  const auto cols = graph.columns();
  const auto w = graph.weights();
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    auto o = out.row(i);
    for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
      const double we = w[e];
      auto hj = h.row(cols[e]);
      for (std::size_t c = 0; c < d; ++c) o[c] += we * hj[c];
    }
  }
  return out;
}

}  // namespace dense

// --- Var / Tape -----------------------------------------------------------------

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(*this); }

bool Var::requires_grad() const { return tape().requires_grad(*this); }

void Tape::check_owned(Var v, const char* what) const {
  if (v.tape_ != this || v.id_ >= nodes_.size())
    throw ContractError(std::string(what) + ": Var does not belong to this tape");
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (consumed_) throw ContractError("cannot record on a tape after backward");
  nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  if (consumed_) throw ContractError("cannot record on a tape after backward");
  Node node;
  node.value = std::move(value);
  for (Var in : inputs) {
    check_owned(in, "record");
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  check_owned(v, "value");
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v, "requires_grad");
  return nodes_[v.id_].requires_grad;
}

GradientMap Tape::backward(Var loss) {
  check_owned(loss, "backward");
  if (consumed_) throw ContractError("backward called twice on the same tape");
  if (nodes_[loss.id_].value.shape() != Shape{1, 1})
    throw ContractError("backward seed must be a scalar, got " + nodes_[loss.id_].value.shape().str());
  consumed_ = true;

  GradientMap out;
  out.grads_.resize(nodes_.size());
  out.tracked_.resize(nodes_.size());
  for (std::size_t k = 0; k < nodes_.size(); ++k) out.tracked_[k] = nodes_[k].requires_grad;

  if (nodes_[loss.id_].requires_grad) out.grads_[loss.id_] = Tensor::scalar(1.0);
  std::vector<Tensor*> slots;
  for (std::size_t k = loss.id_ + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!node.backward || out.grads_[k].empty()) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t s = 0; s < node.inputs.size(); ++s) {
      const std::size_t in = node.inputs[s];
      if (!nodes_[in].requires_grad) continue;
      if (out.grads_[in].empty()) out.grads_[in] = Tensor(nodes_[in].value.shape());
      slots[s] = &out.grads_[in];
    }
    node.backward(out.grads_[k], node.value, slots);
  }
  for (std::size_t k = 0; k < nodes_.size(); ++k)
    if (out.tracked_[k] && out.grads_[k].empty()) out.grads_[k] = Tensor(nodes_[k].value.shape());
  return out;
}

const Tensor& GradientMap::operator[](Var v) const {
  if (v.id() >= grads_.size()) throw ContractError("gradient requested for a Var recorded after backward");
  if (!tracked_[v.id()]) throw ContractError("gradient requested for a Var that does not require grad");
  return grads_[v.id()];
}

// --- primitives -------------------------------------------------------------------

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands live on different tapes");
  return a.tape();
}

enum class Broadcast { none, a_scalar, b_scalar };

Broadcast check_elementwise(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.shape() == Shape{1, 1}) return Broadcast::a_scalar;
  if (b.shape() == Shape{1, 1}) return Broadcast::b_scalar;
  throw DimensionError(std::string(op) + ": shapes " + a.shape().str() + " and " + b.shape().str() +
                       " are not broadcastable");
}

// Reduces an elementwise gradient onto an operand that may have been broadcast.
void accumulate_broadcast(const Tensor& g, Tensor* slot, bool was_scalar) {
  if (!slot) return;
  if (was_scalar) {
    double s = 0.0;
    for (double v : g.data()) s += v;
    (*slot)[0] += s;
  } else {
    slot->accumulate(g);
  }
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  Tensor out = dense::matmul(a.value(), b.value());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  return tape.record(std::move(out), {a, b}, [&av, &bv](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    if (gi[0]) dense::matmul_nt_acc(g, bv, *gi[0]);
    if (gi[1]) dense::matmul_tn_acc(av, g, *gi[1]);
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast bc = check_elementwise(av, bv, "add");
  const Shape shape = bc == Broadcast::a_scalar ? bv.shape() : av.shape();
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[bc == Broadcast::a_scalar ? 0 : i] + bv[bc == Broadcast::b_scalar ? 0 : i];
  return tape.record(std::move(out), {a, b}, [bc](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    accumulate_broadcast(g, gi[0], bc == Broadcast::a_scalar);
    accumulate_broadcast(g, gi[1], bc == Broadcast::b_scalar);
  });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast bc = check_elementwise(av, bv, "sub");
  const Shape shape = bc == Broadcast::a_scalar ? bv.shape() : av.shape();
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[bc == Broadcast::a_scalar ? 0 : i] - bv[bc == Broadcast::b_scalar ? 0 : i];
  return tape.record(std::move(out), {a, b}, [bc](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    accumulate_broadcast(g, gi[0], bc == Broadcast::a_scalar);
    if (gi[1]) {
      Tensor neg = map(g, [](double v) { return -v; });
      accumulate_broadcast(neg, gi[1], bc == Broadcast::b_scalar);
    }
  });
}

Var hadamard(Var a, Var b) {
  Tape& tape = same_tape(a, b, "hadamard");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast bc = check_elementwise(av, bv, "hadamard");
  const Shape shape = bc == Broadcast::a_scalar ? bv.shape() : av.shape();
  auto ia = [bc](std::size_t i) { return bc == Broadcast::a_scalar ? 0 : i; };
  auto ib = [bc](std::size_t i) { return bc == Broadcast::b_scalar ? 0 : i; };
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[ia(i)] * bv[ib(i)];
  return tape.record(std::move(out), {a, b}, [&av, &bv, bc, ia, ib](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    if (gi[0]) {
      Tensor t(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) t[i] = g[i] * bv[ib(i)];
      accumulate_broadcast(t, gi[0], bc == Broadcast::a_scalar);
    }
    if (gi[1]) {
      Tensor t(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) t[i] = g[i] * av[ia(i)];
      accumulate_broadcast(t, gi[1], bc == Broadcast::b_scalar);
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = map(a.value(), [factor](double v) { return v * factor; });
  return a.tape().record(std::move(out), {a}, [factor](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += factor * g[i];
  });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = same_tape(x, bias, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols())
    throw DimensionError("add_bias: bias " + bv.shape().str() + " does not match " + xv.shape().str());
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return tape.record(std::move(out), {x, bias}, [](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->accumulate(g);
    if (gi[1]) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) (*gi[1])[c] += row[c];
      }
    }
  });
}

Var leaky_relu(Var x, double slope) {
  const Tensor& xv = x.value();
  Tensor out = map(xv, [slope](double v) { return v > 0.0 ? v : slope * v; });
  return x.tape().record(std::move(out), {x}, [&xv, slope](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += xv[i] > 0.0 ? g[i] : slope * g[i];
  });
}

Var relu(Var x) { return leaky_relu(x, 0.0); }

Var sigmoid(Var x) {
  Tensor out = map(x.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return x.tape().record(std::move(out), {x}, [](const Tensor& g, const Tensor& y, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var exp(Var x) {
  Tensor out = map(x.value(), [](double v) { return std::exp(v); });
  return x.tape().record(std::move(out), {x}, [](const Tensor& g, const Tensor& y, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * y[i];
  });
}

Var log(Var x) {
  const Tensor& xv = x.value();
  for (double v : xv.data())
    if (!(v > 0.0)) throw NumericError("log: non-positive or NaN argument");
  Tensor out = map(xv, [](double v) { return std::log(v); });
  return x.tape().record(std::move(out), {x}, [&xv](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] / xv[i];
  });
}

Var concat_rows(Var a, Var b) {
  Tape& tape = same_tape(a, b, "concat_rows");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows())
    throw DimensionError("concat_rows: row counts differ, " + av.shape().str() + " and " + bv.shape().str());
  const std::size_t p = av.cols(), q = bv.cols();
  Tensor out(av.rows(), p + q);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy(av.row(r).begin(), av.row(r).end(), out.row(r).begin());
    std::copy(bv.row(r).begin(), bv.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(p));
  }
  return tape.record(std::move(out), {a, b}, [p, q](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto row = g.row(r);
      if (gi[0])
        for (std::size_t c = 0; c < p; ++c) (*gi[0])(r, c) += row[c];
      if (gi[1])
        for (std::size_t c = 0; c < q; ++c) (*gi[1])(r, c) += row[p + c];
    }
  });
}

Var repeat_cols(Var x, std::size_t times) {
  const Tensor& xv = x.value();
  if (xv.cols() != 1) throw DimensionError("repeat_cols expects a column, got " + xv.shape().str());
  Tensor out(xv.rows(), times);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < times; ++c) out(r, c) = xv[r];
  return x.tape().record(std::move(out), {x}, [](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (double v : g.row(r)) (*gi[0])[r] += v;
  });
}

Var mean_col_blocks(Var x, std::size_t blocks) {
  const Tensor& xv = x.value();
  if (blocks == 0 || xv.cols() % blocks != 0)
    throw DimensionError("mean_col_blocks: " + std::to_string(xv.cols()) + " columns not divisible into " +
                         std::to_string(blocks) + " blocks");
  const std::size_t f = xv.cols() / blocks;
  const double inv = 1.0 / static_cast<double>(blocks);
  Tensor out(xv.rows(), f);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t c = 0; c < f; ++c) out(r, c) += xv(r, b * f + c) * inv;
  return x.tape().record(std::move(out), {x}, [blocks, f, inv](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t c = 0; c < f; ++c) (*gi[0])(r, b * f + c) += g(r, c) * inv;
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    const double gv = g[0];
    for (double& v : gi[0]->data()) v += gv;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var softmax_rows(Var x) {
  Tensor out = dense::softmax_rows(x.value());
  return x.tape().record(std::move(out), {x}, [](const Tensor& g, const Tensor& y, std::span<Tensor* const> gi) {
    // dx = y * (g - <g, y>) per row
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto gr = g.row(r);
      auto yr = y.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < gr.size(); ++c) dot += gr[c] * yr[c];
      auto dx = gi[0]->row(r);
      for (std::size_t c = 0; c < gr.size(); ++c) dx[c] += yr[c] * (gr[c] - dot);
    }
  });
}

// --- sparse primitives ----------------------------------------------------------

Var spmm(const SparseGraph& graph, Var h) {
  Tensor out = dense::spmm(graph, h.value());
  return h.tape().record(std::move(out), {h}, [&graph](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    // dh_j += sum_i A_ij g_i
    const auto cols = graph.columns();
    const auto w = graph.weights();
    const std::size_t d = g.cols();
    for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
      auto gr = g.row(i);
      for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
        auto dh = gi[0]->row(cols[e]);
        for (std::size_t c = 0; c < d; ++c) dh[c] += w[e] * gr[c];
      }
    }
  });
}

Var spmm_edges(const SparseGraph& graph, Var w, Var h) {
  Tape& tape = same_tape(w, h, "spmm_edges");
  const Tensor& wv = w.value();
  const Tensor& hv = h.value();
  const std::size_t heads = wv.cols();
  if (wv.rows() != graph.num_edges() || heads == 0)
    throw DimensionError("spmm_edges: weights " + wv.shape().str() + " do not match " +
                         std::to_string(graph.num_edges()) + " edges");
  if (hv.rows() != graph.num_nodes() || hv.cols() % heads != 0)
    throw DimensionError("spmm_edges: features " + hv.shape().str() + " incompatible with graph/heads");
  const std::size_t f = hv.cols() / heads;
  const auto cols = graph.columns();
  Tensor out(hv.rows(), hv.cols());
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    auto o = out.row(i);
    for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
      auto hj = hv.row(cols[e]);
      for (std::size_t k = 0; k < heads; ++k) {
        const double we = wv(e, k);
        for (std::size_t c = 0; c < f; ++c) o[k * f + c] += we * hj[k * f + c];
      }
    }
  }
  return tape.record(std::move(out), {w, h}, [&graph, &wv, &hv, heads, f](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    const auto cols = graph.columns();
    for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
      auto gr = g.row(i);
      for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
        const std::size_t j = cols[e];
        auto hj = hv.row(j);
        for (std::size_t k = 0; k < heads; ++k) {
          if (gi[0]) {
            double acc = 0.0;
            for (std::size_t c = 0; c < f; ++c) acc += gr[k * f + c] * hj[k * f + c];
            (*gi[0])(e, k) += acc;
          }
          if (gi[1]) {
            auto dh = gi[1]->row(j);
            const double we = wv(e, k);
            for (std::size_t c = 0; c < f; ++c) dh[k * f + c] += we * gr[k * f + c];
          }
        }
      }
    }
  });
}

Var gather_edge_sum(const SparseGraph& graph, Var src, Var dst) {
  Tape& tape = same_tape(src, dst, "gather_edge_sum");
  const Tensor& sv = src.value();
  const Tensor& dv = dst.value();
  if (sv.shape() != dv.shape() || sv.rows() != graph.num_nodes())
    throw DimensionError("gather_edge_sum: src " + sv.shape().str() + ", dst " + dv.shape().str() + ", N=" +
                         std::to_string(graph.num_nodes()));
  const std::size_t k = sv.cols();
  const auto cols = graph.columns();
  Tensor out(graph.num_edges(), k);
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    auto si = sv.row(i);
    for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
      auto dj = dv.row(cols[e]);
      auto o = out.row(e);
      for (std::size_t c = 0; c < k; ++c) o[c] = si[c] + dj[c];
    }
  }
  return tape.record(std::move(out), {src, dst}, [&graph, k](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    const auto cols = graph.columns();
    for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
      for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
        auto ge = g.row(e);
        if (gi[0]) {
          auto ds = gi[0]->row(i);
          for (std::size_t c = 0; c < k; ++c) ds[c] += ge[c];
        }
        if (gi[1]) {
          auto dd = gi[1]->row(cols[e]);
          for (std::size_t c = 0; c < k; ++c) dd[c] += ge[c];
        }
      }
    }
  });
}

Var edge_mlp(const SparseGraph& graph, Var u, Var v, Var b1, Var w2, Var b2) {
  Tape& tape = same_tape(u, v, "edge_mlp");
  same_tape(u, b1, "edge_mlp");
  same_tape(u, w2, "edge_mlp");
  same_tape(u, b2, "edge_mlp");
  const Tensor& uv = u.value();
  const Tensor& vv = v.value();
  const Tensor& b1v = b1.value();
  const Tensor& w2v = w2.value();
  const Tensor& b2v = b2.value();
  const std::size_t k = uv.cols();
  if (vv.shape() != uv.shape() || uv.rows() != graph.num_nodes() || b1v.shape() != Shape{1, k} ||
      w2v.shape() != Shape{k, 1} || b2v.shape() != Shape{1, 1})
    throw DimensionError("edge_mlp: u " + uv.shape().str() + ", v " + vv.shape().str() + ", b1 " + b1v.shape().str() +
                         ", w2 " + w2v.shape().str() + ", b2 " + b2v.shape().str() + ", N=" +
                         std::to_string(graph.num_nodes()));
  const auto cols = graph.columns();
  Tensor out(graph.num_edges(), 1);
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    const double* ui = uv.row(i).data();
    for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
      const double* vj = vv.row(cols[e]).data();
      double acc = b2v[0];
      for (std::size_t c = 0; c < k; ++c) acc += std::max(ui[c] + vj[c] + b1v[c], 0.0) * w2v[c];
      out[e] = acc;
    }
  }
  return tape.record(std::move(out), {u, v, b1, w2, b2},
                     [&graph, &uv, &vv, &b1v, &w2v, k](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    const auto cols = graph.columns();
    std::vector<double> dpre(k);
    for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
      const double* ui = uv.row(i).data();
      for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
        const std::size_t j = cols[e];
        const double* vj = vv.row(j).data();
        const double ge = g[e];
        if (gi[4]) (*gi[4])[0] += ge;
        for (std::size_t c = 0; c < k; ++c) {
          const double pre = ui[c] + vj[c] + b1v[c];
          const bool on = pre > 0.0;
          if (gi[3] && on) (*gi[3])[c] += ge * pre;
          dpre[c] = on ? ge * w2v[c] : 0.0;
        }
        if (gi[0]) {
          auto d = gi[0]->row(i);
          for (std::size_t c = 0; c < k; ++c) d[c] += dpre[c];
        }
        if (gi[1]) {
          auto d = gi[1]->row(j);
          for (std::size_t c = 0; c < k; ++c) d[c] += dpre[c];
        }
        if (gi[2])
          for (std::size_t c = 0; c < k; ++c) (*gi[2])[c] += dpre[c];
      }
    }
  });
}

Var segment_softmax(const SparseGraph& graph, Var scores) {
  const Tensor& sv = scores.value();
  if (sv.rows() != graph.num_edges())
    throw DimensionError("segment_softmax: scores " + sv.shape().str() + " vs " +
                         std::to_string(graph.num_edges()) + " edges");
  const std::size_t k = sv.cols();
  Tensor out(sv.shape());
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    const std::size_t b = graph.row_begin(i), e_end = graph.row_end(i);
    if (b == e_end) continue;
    for (std::size_t c = 0; c < k; ++c) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = b; e < e_end; ++e) {
        if (std::isnan(sv(e, c))) throw NumericError("segment_softmax: NaN score");
        mx = std::max(mx, sv(e, c));
      }
      double total = 0.0;
      for (std::size_t e = b; e < e_end; ++e) {
        out(e, c) = std::exp(sv(e, c) - mx);
        total += out(e, c);
      }
      for (std::size_t e = b; e < e_end; ++e) out(e, c) /= total;
    }
  }
  return scores.tape().record(std::move(out), {scores}, [&graph, k](const Tensor& g, const Tensor& y, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
      const std::size_t b = graph.row_begin(i), e_end = graph.row_end(i);
      for (std::size_t c = 0; c < k; ++c) {
        double dot = 0.0;
        for (std::size_t e = b; e < e_end; ++e) dot += g(e, c) * y(e, c);
        for (std::size_t e = b; e < e_end; ++e) (*gi[0])(e, c) += y(e, c) * (g(e, c) - dot);
      }
    }
  });
}

Var head_dot(Var x, Var a) {
  Tape& tape = same_tape(x, a, "head_dot");
  const Tensor& xv = x.value();
  const Tensor& av = a.value();
  const std::size_t heads = av.rows(), f = av.cols();
  if (heads * f != xv.cols())
    throw DimensionError("head_dot: features " + xv.shape().str() + " vs attention " + av.shape().str());
  Tensor out(xv.rows(), heads);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t k = 0; k < heads; ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < f; ++c) acc += xv(r, k * f + c) * av(k, c);
      out(r, k) = acc;
    }
  return tape.record(std::move(out), {x, a}, [&xv, &av, heads, f](const Tensor& g, const Tensor& /*out*/, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t k = 0; k < heads; ++k) {
        const double gv = g(r, k);
        for (std::size_t c = 0; c < f; ++c) {
          if (gi[0]) (*gi[0])(r, k * f + c) += gv * av(k, c);
          if (gi[1]) (*gi[1])(k, c) += gv * xv(r, k * f + c);
        }
      }
  });
}

}  // namespace patchgraph
