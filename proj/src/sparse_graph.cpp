// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/sparse_graph.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "patchgraph/autodiff.hpp"
#include "patchgraph/binary_io.hpp"

namespace patchgraph {

namespace {
constexpr std::string_view kGraphMagic = "PGGR";
constexpr std::uint16_t kGraphVersion = 1;
}  // namespace

std::string_view to_string(EdgeType type) {
  switch (type) {
    case EdgeType::spatial: return "spatial";
    case EdgeType::knn: return "knn";
    case EdgeType::reverse: return "reverse";
    case EdgeType::self_loop: return "self";
  }
  return "unknown";
}

SparseGraph::SparseGraph(std::size_t num_nodes, std::vector<std::size_t> row_offsets,
                         std::vector<std::uint32_t> columns, std::vector<double> weights,
                         std::vector<EdgeType> types)
    : num_nodes_(num_nodes),
      row_offsets_(std::move(row_offsets)),
      columns_(std::move(columns)),
      weights_(std::move(weights)),
      types_(std::move(types)) {
  if (row_offsets_.size() != num_nodes_ + 1 || row_offsets_.front() != 0 || row_offsets_.back() != columns_.size())
    throw StructuralError("row offsets inconsistent with node/edge counts");
  if (weights_.size() != columns_.size() || types_.size() != columns_.size())
    throw StructuralError("columns, weights and types must have equal length");
  for (std::size_t i = 0; i < num_nodes_; ++i)
    if (row_offsets_[i] > row_offsets_[i + 1]) throw StructuralError("row offsets decrease at row " + std::to_string(i));
  for (std::size_t e = 0; e < columns_.size(); ++e) {
    if (columns_[e] >= num_nodes_)
      throw StructuralError("column index " + std::to_string(columns_[e]) + " out of bounds for N=" +
                            std::to_string(num_nodes_));
    if (!std::isfinite(weights_[e]) || weights_[e] < 0.0)
      throw StructuralError("edge " + std::to_string(e) + " has negative or non-finite weight");
    if (static_cast<std::uint8_t>(types_[e]) > 3) throw StructuralError("unknown edge type");
  }
}

std::vector<std::uint32_t> SparseGraph::edge_rows() const {
  std::vector<std::uint32_t> rows(num_edges());
  for (std::size_t i = 0; i < num_nodes_; ++i)
    for (std::size_t e = row_begin(i); e < row_end(i); ++e) rows[e] = static_cast<std::uint32_t>(i);
  return rows;
}

bool SparseGraph::has_edge(std::size_t i, std::size_t j) const {
  for (std::size_t e = row_begin(i); e < row_end(i); ++e)
    if (columns_[e] == j) return true;
  return false;
}

double SparseGraph::weight(std::size_t i, std::size_t j) const {
  double w = 0.0;
  for (std::size_t e = row_begin(i); e < row_end(i); ++e)
    if (columns_[e] == j) w += weights_[e];
  return w;
}

Tensor SparseGraph::to_dense() const {
  Tensor out(num_nodes_, num_nodes_);
  for (std::size_t i = 0; i < num_nodes_; ++i)
    for (std::size_t e = row_begin(i); e < row_end(i); ++e) out(i, columns_[e]) += weights_[e];
  return out;
}

std::vector<std::uint8_t> serialize_graph(const SparseGraph& graph) {
  if (graph.num_nodes() > std::numeric_limits<std::uint32_t>::max() ||
      graph.num_edges() > std::numeric_limits<std::uint32_t>::max())
    throw StructuralError("graph too large for the 32-bit graph file format");
  io::ByteWriter w;
  w.bytes(kGraphMagic);
  w.put<std::uint16_t>(kGraphVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(graph.num_nodes()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(graph.num_edges()));
  for (std::size_t off : graph.row_offsets()) w.put<std::uint32_t>(static_cast<std::uint32_t>(off));
  for (std::uint32_t c : graph.columns()) w.put<std::uint32_t>(c);
  for (double x : graph.weights()) w.put<float>(static_cast<float>(x));
  for (EdgeType t : graph.types()) w.put<std::uint8_t>(static_cast<std::uint8_t>(t));
  return w.take();
}

SparseGraph deserialize_graph(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "graph file");
  r.expect_magic(kGraphMagic);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kGraphVersion) r.fail("unsupported version " + std::to_string(version));
  const std::size_t n = r.get<std::uint32_t>("node count");
  const std::size_t e = r.get<std::uint32_t>("edge count");
  r.need((n + 1) * 4 + e * 9, "graph payload");
  std::vector<std::size_t> offsets(n + 1);
  for (auto& o : offsets) o = r.get<std::uint32_t>("row offset");
  std::vector<std::uint32_t> cols(e);
  for (auto& c : cols) c = r.get<std::uint32_t>("column");
  std::vector<double> weights(e);
  for (auto& w : weights) w = r.get<float>("weight");
  std::vector<EdgeType> types(e);
  for (auto& t : types) {
    const auto raw = r.get<std::uint8_t>("edge type");
    if (raw > 3) r.fail("unknown edge type " + std::to_string(raw));
    t = static_cast<EdgeType>(raw);
  }
  if (r.remaining() != 0) r.fail("trailing bytes after graph payload");
  try {
    return SparseGraph(n, std::move(offsets), std::move(cols), std::move(weights), std::move(types));
  } catch (const StructuralError& err) {
    throw FormatError(std::string("graph file: ") + err.what(), r.offset());
  }
}

void write_graph(const SparseGraph& graph, const std::filesystem::path& path) {
  io::write_file(path, serialize_graph(graph));
}

SparseGraph read_graph(const std::filesystem::path& path) { return deserialize_graph(io::read_file(path)); }

namespace io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace io

}  // namespace patchgraph
