// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

// Tape-based eager reverse-mode autodiff over dense row-major matrices.
//
// Every value is a 2-D Tensor (a scalar is 1x1). Operations on Var handles
// compute their result immediately and append a node to the owning Tape;
// Tape::backward walks the nodes in reverse order and accumulates input
// gradients in tape order, so results are bit-reproducible.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "patchgraph/errors.hpp"

namespace patchgraph {

class SparseGraph;

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  std::string str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);
  explicit Tensor(Shape shape, double fill = 0.0) : Tensor(shape.rows, shape.cols, fill) {}

  static Tensor scalar(double value) { return Tensor(1, 1, value); }
  static Tensor identity(std::size_t n);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  Shape shape() const noexcept { return shape_; }
  std::size_t rows() const noexcept { return shape_.rows; }
  std::size_t cols() const noexcept { return shape_.cols; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_.cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_.cols + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * shape_.cols, shape_.cols}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * shape_.cols, shape_.cols}; }

  /// Value of a 1x1 tensor.
  double item() const;

  /// this += other (exact shape).
  void accumulate(const Tensor& other);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Plain (non-recording) dense kernels shared by the autodiff ops.
namespace dense {
Tensor matmul(const Tensor& a, const Tensor& b);
/// out += a^T * b
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out);
/// out += a * b^T
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& x);
/// Static-weight sparse product graph * h.
Tensor spmm(const SparseGraph& graph, const Tensor& h);
}  // namespace dense

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// Tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  Shape shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the output gradient, the op's recorded output and one slot per
/// input; a null slot means that input does not require a gradient.
/// Implementations accumulate (+=) into the slots.
using BackwardFn =
    std::function<void(const Tensor& grad_out, const Tensor& output, std::span<Tensor* const> grad_inputs)>;

/// Gradients produced by one backward pass, indexed by Var.
class GradientMap {
 public:
  /// Gradient of the loss with respect to v. Leaves that require a gradient
  /// but are unreachable from the loss get zeros; throws ContractError for
  /// values that never required one.
  const Tensor& operator[](Var v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<bool> tracked_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. `backward` is dropped when no input requires a
  /// gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every node. `loss` must be
  /// a 1x1 value on this tape; a tape supports exactly one backward pass.
  GradientMap backward(Var loss);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(Var v, const char* what) const;

  std::deque<Node> nodes_;  // deque: recorded values keep stable addresses
  bool consumed_ = false;
};

inline GradientMap backward(Tape& tape, Var loss) { return tape.backward(loss); }

// --- primitives ------------------------------------------------------------

Var matmul(Var a, Var b);

/// Elementwise; operands must have equal shapes or one must be 1x1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
/// x[m x n] + bias[1 x n] broadcast over rows.
Var add_bias(Var x, Var bias);

Var leaky_relu(Var x, double slope = 0.2);
Var relu(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var log(Var x);

/// Row-wise concatenation [a || b]: a[m x p], b[m x q] -> [m x (p+q)].
Var concat_rows(Var a, Var b);
/// x[m x 1] -> [m x times], each row copied across columns.
Var repeat_cols(Var x, std::size_t times);
/// x[m x (blocks*f)] -> [m x f], mean of the column blocks.
Var mean_col_blocks(Var x, std::size_t blocks);

Var sum(Var x);
Var mean(Var x);

/// Numerically stable row softmax. NaN input throws NumericError.
Var softmax_rows(Var x);

// --- sparse primitives ------------------------------------------------------
// The graph is captured by reference and must outlive the backward pass.

/// graph * h using the graph's stored (constant) weights.
Var spmm(const SparseGraph& graph, Var h);
/// Multi-head sparse product with per-edge learnable weights:
/// w[E x H], h[N x (H*f)]; head k uses w(:,k) on column block k.
Var spmm_edges(const SparseGraph& graph, Var w, Var h);
/// Per-edge rows src[row(e)] + dst[col(e)]: src, dst [N x k] -> [E x k].
Var gather_edge_sum(const SparseGraph& graph, Var src, Var dst);
/// Per-edge two-layer MLP on split first-layer terms:
/// out[e] = w2 . relu(u[row(e)] + v[col(e)] + b1) + b2, with u, v [N x k],
/// b1 [1 x k], w2 [k x 1], b2 [1 x 1] -> [E x 1]. The hidden layer is
/// recomputed in backward rather than stored.
Var edge_mlp(const SparseGraph& graph, Var u, Var v, Var b1, Var w2, Var b2);
/// Softmax of scores[E x k] over each row's edges, independently per column.
Var segment_softmax(const SparseGraph& graph, Var scores);
/// Per-head dot products: x[N x (H*f)], a[H x f] -> [N x H].
Var head_dot(Var x, Var a);

}  // namespace patchgraph
