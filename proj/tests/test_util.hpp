// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "patchgraph/autodiff.hpp"
#include "patchgraph/random.hpp"
#include "patchgraph/sparse_graph.hpp"

namespace pgtest {

using namespace patchgraph;

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Random directed graph without self-loops; each ordered pair kept with
/// probability p, weights in [0.1, 1].
inline SparseGraph random_graph(Rng& rng, std::size_t n, double p, bool self_loops = false) {
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> cols;
  std::vector<double> w;
  std::vector<EdgeType> types;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool self = i == j;
      if (self ? !self_loops : rng.uniform() >= p) continue;
      cols.push_back(static_cast<std::uint32_t>(j));
      w.push_back(rng.uniform(0.1, 1.0));
      types.push_back(self ? EdgeType::self_loop : static_cast<EdgeType>(rng.below(3)));
    }
    offsets.push_back(cols.size());
  }
  return SparseGraph(n, std::move(offsets), std::move(cols), std::move(w), std::move(types));
}

using Builder = std::function<Var(std::vector<Var>&)>;

/// Projects a possibly non-scalar output to a scalar with fixed random
/// coefficients so every output entry contributes to the checked gradient.
inline Var project(Var out, std::uint64_t seed) {
  if (out.shape() == Shape{1, 1}) return out;
  Rng rng(seed);
  Var r = out.tape().constant(random_tensor(rng, out.shape().rows, out.shape().cols));
  return sum(hadamard(out, r));
}

inline double evaluate(const Builder& f, const std::vector<Tensor>& inputs, std::uint64_t seed) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return project(f(vars), seed).value().item();
}

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
/// of the gradient over all inputs stacked into one vector, central
/// differences with step h. Stacking keeps blocks whose exact gradient is zero
/// (shift-invariant attention terms, for one) from reducing to roundoff ratios.
inline double gradient_error(const Builder& f, std::vector<Tensor> inputs, double h = 1e-6,
                             std::uint64_t seed = 99, double floor = 1e-8) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  Var loss = project(f(vars), seed);
  const GradientMap grads = tape.backward(loss);
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = grads[vars[k]];
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double up = evaluate(f, inputs, seed);
      inputs[k][i] = saved - h;
      const double down = evaluate(f, inputs, seed);
      inputs[k][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace pgtest
