// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace patchgraph {

class Tensor;

enum class EdgeType : std::uint8_t {
  spatial = 0,
  knn = 1,
  reverse = 2,
  self_loop = 3,  // only ever inserted by normalization / attention support
};

std::string_view to_string(EdgeType type);

/// Directed weighted adjacency in compressed-row form. Row i lists the
/// out-edges i -> j; in message passing row i aggregates from its columns.
class SparseGraph {
 public:
  SparseGraph() : row_offsets_{0} {}
  explicit SparseGraph(std::size_t num_nodes) : num_nodes_(num_nodes), row_offsets_(num_nodes + 1, 0) {}

  /// Takes ownership of CSR arrays and checks them (offsets monotone, columns
  /// < N, weights finite and non-negative). Throws StructuralError.
  SparseGraph(std::size_t num_nodes, std::vector<std::size_t> row_offsets, std::vector<std::uint32_t> columns,
              std::vector<double> weights, std::vector<EdgeType> types);

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_edges() const noexcept { return columns_.size(); }

  std::size_t row_begin(std::size_t i) const { return row_offsets_[i]; }
  std::size_t row_end(std::size_t i) const { return row_offsets_[i + 1]; }
  std::size_t degree(std::size_t i) const { return row_end(i) - row_begin(i); }

  /// Row index for every stored edge, in storage order.
  std::vector<std::uint32_t> edge_rows() const;

  std::span<const std::size_t> row_offsets() const noexcept { return row_offsets_; }
  std::span<const std::uint32_t> columns() const noexcept { return columns_; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<double> mutable_weights() noexcept { return weights_; }
  std::span<const EdgeType> types() const noexcept { return types_; }

  bool has_edge(std::size_t i, std::size_t j) const;
  double weight(std::size_t i, std::size_t j) const;  // 0 when absent

  /// Dense N x N copy (test and small-graph use).
  Tensor to_dense() const;

  friend bool operator==(const SparseGraph&, const SparseGraph&) = default;

 private:
  std::size_t num_nodes_ = 0;
  std::vector<std::size_t> row_offsets_;
  std::vector<std::uint32_t> columns_;
  std::vector<double> weights_;
  std::vector<EdgeType> types_;
};

/// Graph file: "PGGR", u16 version, u32 N, u32 E, u32 offsets[N+1],
/// u32 columns[E], f32 weights[E], u8 types[E]; little-endian.
std::vector<std::uint8_t> serialize_graph(const SparseGraph& graph);
SparseGraph deserialize_graph(std::span<const std::uint8_t> bytes);
void write_graph(const SparseGraph& graph, const std::filesystem::path& path);
SparseGraph read_graph(const std::filesystem::path& path);

}  // namespace patchgraph
