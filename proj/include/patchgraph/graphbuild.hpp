// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

// Hybrid patch graph: spatial grid adjacency, feature k-NN links and
// down-weighted farthest ("reverse", heterophilous) links, weighted by a
// Gaussian kernel over feature and position distance, then row- or
// symmetrically normalized.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "patchgraph/autodiff.hpp"
#include "patchgraph/sparse_graph.hpp"

namespace patchgraph {

/// H_s x W_s grid of patch features. Row n = r * W_s + c.
struct PatchEmbeddingGrid {
  std::size_t height_s = 0;
  std::size_t width_s = 0;
  std::size_t stride = 1;        // token stride in source pixels
  std::size_t image_height = 0;  // source image size
  std::size_t image_width = 0;
  Tensor features;  // N x D, rows L2-normalized
  Tensor centres;   // N x 2, (y, x) patch centres in pixels

  std::size_t num_nodes() const noexcept { return height_s * width_s; }
  std::size_t dim() const noexcept { return features.cols(); }

  /// Validates dimensions, L2-normalizes feature rows (zero rows stay zero)
  /// and derives patch centres ((r + 0.5) H / H_s, (c + 0.5) W / W_s).
  static PatchEmbeddingGrid make(std::size_t height_s, std::size_t width_s, Tensor features, std::size_t stride,
                                 std::size_t image_height, std::size_t image_width);
};

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  EdgeType type = EdgeType::spatial;

  friend bool operator==(const Edge&, const Edge&) = default;
};

enum class Normalization { row, sym };

struct GammaWeights {
  double spatial = 1.0;
  double knn = 1.0;
  double reverse = 0.25;

  double of(EdgeType type) const;
};

struct GraphConfig {
  std::size_t k_spatial = 8;
  std::size_t k_knn = 8;
  std::size_t k_reverse = 4;
  std::optional<double> sigma_f;  // unset: median feature distance over candidate edges
  std::optional<double> sigma_s;  // unset: 2 x stride
  GammaWeights gamma;
  Normalization normalization = Normalization::sym;
};

/// 4- or 8-neighbourhood on the token grid, both directions.
std::vector<Edge> spatial_edges(const PatchEmbeddingGrid& grid, std::size_t k_spatial = 8);

/// k most cosine-similar other nodes per node; ties to the lower index.
std::vector<Edge> knn_feature_edges(const PatchEmbeddingGrid& grid, std::size_t k = 8);

/// k_rev least cosine-similar nodes per node; ties to the lower index.
std::vector<Edge> farthest_reverse_edges(const PatchEmbeddingGrid& grid, std::size_t k_rev = 4);

/// Collapses duplicate (i, j) pairs keeping spatial > knn > reverse, drops
/// self-pairs, and weighs each survivor with
///   gamma[type] * exp(-(1 - x_i.x_j)^2 / (2 sigma_f^2) - |p_i - p_j|^2 / (2 sigma_s^2)).
SparseGraph edge_weights(const PatchEmbeddingGrid& grid, const std::vector<Edge>& edges, double sigma_f,
                         double sigma_s, const GammaWeights& gamma);

/// Divides each row by its sum; rows summing to zero get a unit self-loop.
SparseGraph row_normalize(const SparseGraph& graph);

/// D^-1/2 (max(A, A^T) + I) D^-1/2 with D the degree of max(A, A^T) + I.
SparseGraph sym_normalize(const SparseGraph& graph);

/// Median of (1 - x_i.x_j) over the given edges (1.0 if that is not positive).
double median_feature_distance(const PatchEmbeddingGrid& grid, const std::vector<Edge>& edges);

/// Union of the three edge families with Gaussian weights, not normalized.
SparseGraph build_hybrid_weights(const PatchEmbeddingGrid& grid, const GraphConfig& config);

SparseGraph normalize(const SparseGraph& graph, Normalization normalization);

/// build_hybrid_weights followed by the configured normalization.
SparseGraph build_hybrid(const PatchEmbeddingGrid& grid, const GraphConfig& config);

/// Resolves the automatic sigma defaults for a grid.
struct ResolvedSigmas {
  double sigma_f;
  double sigma_s;
};
ResolvedSigmas resolve_sigmas(const PatchEmbeddingGrid& grid, const GraphConfig& config,
                              const std::vector<Edge>& candidate_edges);

}  // namespace patchgraph
