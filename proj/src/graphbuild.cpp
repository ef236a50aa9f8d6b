// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/graphbuild.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>

#include "patchgraph/errors.hpp"

namespace patchgraph {

PatchEmbeddingGrid PatchEmbeddingGrid::make(std::size_t height_s, std::size_t width_s, Tensor features,
                                            std::size_t stride, std::size_t image_height, std::size_t image_width) {
  if (height_s == 0 || width_s == 0) throw DimensionError("embedding grid must be non-empty");
  if (features.rows() != height_s * width_s)
    throw DimensionError("embedding grid " + std::to_string(height_s) + "x" + std::to_string(width_s) + " needs " +
                         std::to_string(height_s * width_s) + " feature rows, got " + features.shape().str());
  if (image_height < height_s || image_width < width_s)
    throw DimensionError("source image smaller than the token grid");
  PatchEmbeddingGrid grid;
  grid.height_s = height_s;
  grid.width_s = width_s;
  grid.stride = stride == 0 ? 1 : stride;
  grid.image_height = image_height;
  grid.image_width = image_width;
  for (std::size_t n = 0; n < features.rows(); ++n) {
    auto row = features.row(n);
    double norm2 = 0.0;
    for (double v : row) {
      if (!std::isfinite(v)) throw NumericError("non-finite embedding value in row " + std::to_string(n));
      norm2 += v * v;
    }
    if (norm2 > 0.0) {
      const double inv = 1.0 / std::sqrt(norm2);
      for (double& v : row) v *= inv;
    }
  }
  grid.features = std::move(features);
  grid.centres = Tensor(height_s * width_s, 2);
  const double sy = static_cast<double>(image_height) / static_cast<double>(height_s);
  const double sx = static_cast<double>(image_width) / static_cast<double>(width_s);
  for (std::size_t r = 0; r < height_s; ++r)
    for (std::size_t c = 0; c < width_s; ++c) {
      grid.centres(r * width_s + c, 0) = (static_cast<double>(r) + 0.5) * sy;
      grid.centres(r * width_s + c, 1) = (static_cast<double>(c) + 0.5) * sx;
    }
  return grid;
}

double GammaWeights::of(EdgeType type) const {
  switch (type) {
    case EdgeType::spatial: return spatial;
    case EdgeType::knn: return knn;
    case EdgeType::reverse: return reverse;
    case EdgeType::self_loop: return 1.0;
  }
  return 1.0;
}

std::vector<Edge> spatial_edges(const PatchEmbeddingGrid& grid, std::size_t k_spatial) {
  if (k_spatial != 4 && k_spatial != 8)
    throw ConfigError("k_spatial must be 4 or 8, got " + std::to_string(k_spatial));
  if (grid.num_nodes() == 0) throw ConfigError("spatial_edges on an empty grid");
  static constexpr int kOffsets8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
  static constexpr int kOffsets4[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
  const auto h = static_cast<long>(grid.height_s);
  const auto w = static_cast<long>(grid.width_s);
  std::vector<Edge> edges;
  edges.reserve(grid.num_nodes() * k_spatial);
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c)
      for (std::size_t k = 0; k < k_spatial; ++k) {
        const int* off = k_spatial == 8 ? kOffsets8[k] : kOffsets4[k];
        const long rr = r + off[0], cc = c + off[1];
        if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
        edges.push_back({static_cast<std::uint32_t>(r * w + c), static_cast<std::uint32_t>(rr * w + cc),
                         EdgeType::spatial});
      }
  return edges;
}

namespace {

// Feature-major copy of the features with a padded row stride.
struct Transposed {
  std::size_t stride = 0;
  std::vector<double> v;
};

Transposed transpose_padded(const Tensor& x) {
  Transposed t;
  t.stride = x.rows() + 8;
  t.v.assign(x.cols() * t.stride, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) t.v[c * t.stride + i] = x(i, c);
  return t;
}

// GCC otherwise vectorizes the feature loop with strided gathers; the 4 x 8
// block is left to the straight-line vectorizer.
#if defined(__GNUC__) && !defined(__clang__)
#define PATCHGRAPH_NO_LOOP_VECTORIZE __attribute__((optimize("no-tree-loop-vectorize")))
#else
#define PATCHGRAPH_NO_LOOP_VECTORIZE
#endif

// Similarities of rows [i0, i0 + rows) against every node into sim[r * n + j],
// summed over the feature axis in index order. Register-blocked 4 x 8.
PATCHGRAPH_NO_LOOP_VECTORIZE void similarity_block(const Tensor& x, const Transposed& xt, std::size_t i0, std::size_t rows, double* sim) {
  const std::size_t n = x.rows(), d = x.cols();
  constexpr std::size_t kR = 4, kC = 8;
  const double* xd = x.data().data() + i0 * d;
  std::size_t j0 = 0;
  if (rows == kR) {
    for (; j0 + kC <= n; j0 += kC) {
      double acc[kR][kC] = {};
      for (std::size_t c = 0; c < d; ++c) {
        const double* xc = xt.v.data() + c * xt.stride + j0;
        for (std::size_t r = 0; r < kR; ++r) {
          const double v = xd[r * d + c];
          for (std::size_t jj = 0; jj < kC; ++jj) acc[r][jj] += v * xc[jj];
        }
      }
      for (std::size_t r = 0; r < kR; ++r)
        for (std::size_t jj = 0; jj < kC; ++jj) sim[r * n + j0 + jj] = acc[r][jj];
    }
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = j0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += xd[r * d + c] * xt.v[c * xt.stride + j];
      sim[r * n + j] = acc;
    }
}

// Indices of the k entries of `sim` (excluding `self`) ordered by `better`,
// a strict order on values. Scanning in index order and inserting after
// equal values breaks ties toward the lower index.
template <class Better>
void top_k(std::span<const double> sim, std::size_t self, std::size_t k, Better better,
           std::vector<std::uint32_t>& best) {
  best.clear();
  double worst = 0.0;
  for (std::size_t j = 0; j < sim.size(); ++j) {
    const double s = sim[j];
    if (best.size() == k && !better(s, worst)) continue;
    if (j == self) continue;
    if (best.size() < k) best.push_back(0);
    std::size_t pos = best.size() - 1;
    while (pos > 0 && better(s, sim[best[pos - 1]])) {
      best[pos] = best[pos - 1];
      --pos;
    }
    best[pos] = static_cast<std::uint32_t>(j);
    worst = sim[best.back()];
  }
}

// One exhaustive similarity pass per row, selecting both extremes.
void select_by_similarity(const PatchEmbeddingGrid& grid, std::size_t k_near, std::size_t k_far,
                          std::vector<Edge>* near, std::vector<Edge>* far) {
  const std::size_t n = grid.num_nodes();
  const Tensor& x = grid.features;
  const Transposed xt = transpose_padded(x);
  std::vector<double> block(4 * n);
  std::vector<std::uint32_t> best;
  for (std::size_t i0 = 0; i0 < n; i0 += 4) {
    const std::size_t rows = std::min<std::size_t>(4, n - i0);
    similarity_block(x, xt, i0, rows, block.data());
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = i0 + r;
      const std::span<const double> sim(block.data() + r * n, n);
      const auto src = static_cast<std::uint32_t>(i);
      if (near && k_near > 0) {
        top_k(sim, i, k_near, std::greater<double>(), best);
        for (std::uint32_t j : best) near->push_back({src, j, EdgeType::knn});
      }
      if (far && k_far > 0) {
        top_k(sim, i, k_far, std::less<double>(), best);
        for (std::uint32_t j : best) far->push_back({src, j, EdgeType::reverse});
      }
    }
  }
}

void check_k(const PatchEmbeddingGrid& grid, std::size_t k, const char* name) {
  if (k >= grid.num_nodes())
    throw ConfigError(std::string(name) + " = " + std::to_string(k) + " must be smaller than N = " +
                      std::to_string(grid.num_nodes()));
}

// Sorted by (src, dst); duplicates keep the highest-precedence type.
std::vector<Edge> dedupe(std::vector<Edge> edges) {
  std::vector<Edge> out;
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.src != b.src) return a.src < b.src;
    if (a.dst != b.dst) return a.dst < b.dst;
    return a.type < b.type;
  });
  for (const Edge& e : edges) {
    if (e.src == e.dst) continue;
    if (!out.empty() && out.back().src == e.src && out.back().dst == e.dst) continue;
    out.push_back(e);
  }
  return out;
}

double similarity(const PatchEmbeddingGrid& grid, std::size_t i, std::size_t j) {
  auto xi = grid.features.row(i);
  auto xj = grid.features.row(j);
  double acc = 0.0;
  for (std::size_t c = 0; c < xi.size(); ++c) acc += xi[c] * xj[c];
  return acc;
}

}  // namespace

std::vector<Edge> knn_feature_edges(const PatchEmbeddingGrid& grid, std::size_t k) {
  check_k(grid, k, "k_knn");
  std::vector<Edge> out;
  out.reserve(grid.num_nodes() * k);
  select_by_similarity(grid, k, 0, &out, nullptr);
  return out;
}

std::vector<Edge> farthest_reverse_edges(const PatchEmbeddingGrid& grid, std::size_t k_rev) {
  check_k(grid, k_rev, "k_reverse");
  std::vector<Edge> out;
  out.reserve(grid.num_nodes() * k_rev);
  select_by_similarity(grid, 0, k_rev, nullptr, &out);
  return out;
}

SparseGraph edge_weights(const PatchEmbeddingGrid& grid, const std::vector<Edge>& edges, double sigma_f,
                         double sigma_s, const GammaWeights& gamma) {
  if (!(sigma_f > 0.0) || !(sigma_s > 0.0)) throw ConfigError("sigma_f and sigma_s must be positive");
  for (double g : {gamma.spatial, gamma.knn, gamma.reverse})
    if (!(g > 0.0 && g <= 1.0)) throw ConfigError("gamma values must lie in (0, 1]");
  const std::size_t n = grid.num_nodes();
  for (const Edge& e : edges)
    if (e.src >= n || e.dst >= n) throw StructuralError("edge endpoint out of range");
  const std::vector<Edge> unique = dedupe(edges);

  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<std::uint32_t> cols;
  std::vector<double> weights;
  std::vector<EdgeType> types;
  cols.reserve(unique.size());
  weights.reserve(unique.size());
  types.reserve(unique.size());
  const double inv_f = 1.0 / (2.0 * sigma_f * sigma_f);
  const double inv_s = 1.0 / (2.0 * sigma_s * sigma_s);
  for (const Edge& e : unique) {
    const double feat = 1.0 - similarity(grid, e.src, e.dst);
    const double dy = grid.centres(e.src, 0) - grid.centres(e.dst, 0);
    const double dx = grid.centres(e.src, 1) - grid.centres(e.dst, 1);
    const double w = gamma.of(e.type) * std::exp(-feat * feat * inv_f - (dy * dy + dx * dx) * inv_s);
    ++offsets[e.src + 1];
    cols.push_back(e.dst);
    weights.push_back(w);
    types.push_back(e.type);
  }
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  return SparseGraph(n, std::move(offsets), std::move(cols), std::move(weights), std::move(types));
}

SparseGraph row_normalize(const SparseGraph& graph) {
  const std::size_t n = graph.num_nodes();
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<std::uint32_t> cols;
  std::vector<double> weights;
  std::vector<EdgeType> types;
  const auto gc = graph.columns();
  const auto gw = graph.weights();
  const auto gt = graph.types();
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
      if (gw[e] < 0.0) throw StructuralError("row_normalize: negative weight in row " + std::to_string(i));
      total += gw[e];
    }
    if (total > 0.0) {
      for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
        cols.push_back(gc[e]);
        weights.push_back(gw[e] / total);
        types.push_back(gt[e]);
      }
    } else {
      // Keep any zero-weight edges for support, then the unit self-loop in
      // column order.
      bool placed = false;
      for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
        if (!placed && gc[e] > i) {
          cols.push_back(static_cast<std::uint32_t>(i));
          weights.push_back(1.0);
          types.push_back(EdgeType::self_loop);
          placed = true;
        }
        if (gc[e] == i) {
          cols.push_back(gc[e]);
          weights.push_back(1.0);
          types.push_back(EdgeType::self_loop);
          placed = true;
          continue;
        }
        cols.push_back(gc[e]);
        weights.push_back(0.0);
        types.push_back(gt[e]);
      }
      if (!placed) {
        cols.push_back(static_cast<std::uint32_t>(i));
        weights.push_back(1.0);
        types.push_back(EdgeType::self_loop);
      }
    }
    offsets[i + 1] = cols.size();
  }
  return SparseGraph(n, std::move(offsets), std::move(cols), std::move(weights), std::move(types));
}

SparseGraph sym_normalize(const SparseGraph& graph) {
  const std::size_t n = graph.num_nodes();
  const auto gc = graph.columns();
  const auto gw = graph.weights();
  const auto gt = graph.types();
  for (double w : gw)
    if (w < 0.0) throw StructuralError("sym_normalize: negative weight");

  struct Entry {
    std::uint32_t col;
    double weight;
    EdgeType type;
  };
  // Row i of A^T lists every j with an edge j -> i.
  std::vector<std::vector<Entry>> rows(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = graph.row_begin(i); e < graph.row_end(i); ++e) {
      rows[i].push_back({gc[e], gw[e], gt[e]});
      if (gc[e] != i) rows[gc[e]].push_back({static_cast<std::uint32_t>(i), gw[e], gt[e]});
    }

  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<std::uint32_t> cols;
  std::vector<double> weights;
  std::vector<EdgeType> types;
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = rows[i];
    r.push_back({static_cast<std::uint32_t>(i), 0.0, EdgeType::self_loop});
    std::sort(r.begin(), r.end(), [](const Entry& a, const Entry& b) {
      return a.col < b.col || (a.col == b.col && a.type < b.type);
    });
    std::size_t w = 0;
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (w > 0 && r[w - 1].col == r[k].col) {
        // max over the (i,j)/(j,i) pair; the diagonal sums A_ii with the identity
        if (r[k].col == i)
          r[w - 1].weight += r[k].weight;
        else
          r[w - 1].weight = std::max(r[w - 1].weight, r[k].weight);
        r[w - 1].type = std::min(r[w - 1].type, r[k].type);
        continue;
      }
      r[w++] = r[k];
    }
    r.resize(w);
    for (auto& entry : r) {
      if (entry.col == i) {
        entry.weight += 1.0;
        entry.type = EdgeType::self_loop;
      }
      degree[i] += entry.weight;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& entry : rows[i]) {
      cols.push_back(entry.col);
      weights.push_back(entry.weight / std::sqrt(degree[i] * degree[entry.col]));
      types.push_back(entry.type);
    }
    offsets[i + 1] = cols.size();
  }
  return SparseGraph(n, std::move(offsets), std::move(cols), std::move(weights), std::move(types));
}

double median_feature_distance(const PatchEmbeddingGrid& grid, const std::vector<Edge>& edges) {
  if (edges.empty()) return 1.0;
  std::vector<double> dist;
  dist.reserve(edges.size());
  for (const Edge& e : edges) dist.push_back(1.0 - similarity(grid, e.src, e.dst));
  std::sort(dist.begin(), dist.end());
  const std::size_t m = dist.size();
  const double median = m % 2 == 1 ? dist[m / 2] : 0.5 * (dist[m / 2 - 1] + dist[m / 2]);
  return median > 1e-12 ? median : 1.0;
}

ResolvedSigmas resolve_sigmas(const PatchEmbeddingGrid& grid, const GraphConfig& config,
                              const std::vector<Edge>& candidate_edges) {
  ResolvedSigmas s{};
  s.sigma_f = config.sigma_f ? *config.sigma_f : median_feature_distance(grid, dedupe(candidate_edges));
  s.sigma_s = config.sigma_s ? *config.sigma_s : 2.0 * static_cast<double>(grid.stride);
  return s;
}

SparseGraph build_hybrid_weights(const PatchEmbeddingGrid& grid, const GraphConfig& config) {
  std::vector<Edge> edges;
  if (grid.num_nodes() > 1) edges = spatial_edges(grid, config.k_spatial);
  else if (config.k_spatial != 4 && config.k_spatial != 8)
    throw ConfigError("k_spatial must be 4 or 8, got " + std::to_string(config.k_spatial));
  if (config.k_knn > 0) check_k(grid, config.k_knn, "k_knn");
  if (config.k_reverse > 0) check_k(grid, config.k_reverse, "k_reverse");
  std::vector<Edge> near, far;
  select_by_similarity(grid, config.k_knn, config.k_reverse, &near, &far);
  edges.insert(edges.end(), near.begin(), near.end());
  edges.insert(edges.end(), far.begin(), far.end());
  const ResolvedSigmas sig = resolve_sigmas(grid, config, edges);
  return edge_weights(grid, edges, sig.sigma_f, sig.sigma_s, config.gamma);
}

SparseGraph normalize(const SparseGraph& graph, Normalization normalization) {
  return normalization == Normalization::row ? row_normalize(graph) : sym_normalize(graph);
}

SparseGraph build_hybrid(const PatchEmbeddingGrid& grid, const GraphConfig& config) {
  return normalize(build_hybrid_weights(grid, config), config.normalization);
}

}  // namespace patchgraph
