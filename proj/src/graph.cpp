#include "grafuse/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <spdlog/spdlog.h>

#include "grafuse/error.hpp"

namespace grafuse {

std::vector<NodeId> GraphBundle::nodes_in(Split s) const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(static_cast<NodeId>(i));
  return out;
}

Tensor GraphBundle::feature_tensor() const { return Tensor::from({num_nodes, feature_dim}, features); }

void GraphBundle::validate() const {
  if (num_nodes == 0) throw DataError("bundle has no nodes");
  if (num_classes == 0) throw DataError("bundle has no classes");
  if (features.size() != num_nodes * feature_dim) {
    throw DataError("features: expected " + std::to_string(num_nodes * feature_dim) +
                    " values, found " + std::to_string(features.size()));
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!std::isfinite(features[i])) throw DataError("features: non-finite value at index " + std::to_string(i));
  }
  if (labels.size() != num_nodes) throw DataError("labels: expected one per node");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("labels: node " + std::to_string(i) + " has class " + std::to_string(labels[i]) +
                      " >= num_classes " + std::to_string(num_classes));
    }
  }
  if (split.size() != num_nodes) throw DataError("masks: expected one entry per node");
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (static_cast<std::uint8_t>(split[i]) > 3) {
      throw DataError("masks: node " + std::to_string(i) + " has invalid split code");
    }
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [s, d] = edges[e];
    if (s >= num_nodes || d >= num_nodes) {
      throw DataError("edges: record " + std::to_string(e) + " references node out of range");
    }
    if (s == d) throw DataError("edges: self-loop at record " + std::to_string(e));
    if (e > 0 && !(edges[e - 1] < edges[e])) {
      throw DataError("edges: record " + std::to_string(e) + " not strictly sorted (duplicate or out of order)");
    }
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const Edge rev{edges[e].second, edges[e].first};
    if (!std::binary_search(edges.begin(), edges.end(), rev)) {
      throw DataError("edges: record " + std::to_string(e) + " has no reverse edge");
    }
  }
}

std::vector<Edge> canonical_edges(std::span<const Edge> edges) {
  std::vector<Edge> out;
  out.reserve(edges.size() * 2);
  for (const auto& [s, d] : edges) {
    if (s == d) continue;
    out.emplace_back(s, d);
    out.emplace_back(d, s);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double SparseMatrix::get(std::size_t r, std::size_t c) const {
  const auto begin = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[r]);
  const auto end = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[r + 1]);
  const auto it = std::lower_bound(begin, end, static_cast<NodeId>(c));
  if (it == end || *it != c) return 0.0;
  return values[static_cast<std::size_t>(it - col_indices.begin())];
}

std::vector<double> SparseMatrix::to_dense() const {
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t e = row_offsets[r]; e < row_offsets[r + 1]; ++e) out[r * cols + col_indices[e]] = values[e];
  return out;
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  SparseMatrix m;
  m.rows = m.cols = n;
  m.row_offsets.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) m.row_offsets[i] = i;
  m.col_indices.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.col_indices[i] = static_cast<NodeId>(i);
  m.values.assign(n, 1.0);
  return m;
}

namespace {

// Builds D^-1/2 (S + I) D^-1/2 from per-row sorted neighbor lists (no self entries).
SparseMatrix normalized_with_self_loops(const std::vector<std::vector<NodeId>>& neighbors) {
  const std::size_t n = neighbors.size();
  SparseMatrix m;
  m.rows = m.cols = n;
  m.row_offsets.assign(n + 1, 0);
  std::vector<double> deg(n);
  const auto weight = [&deg](std::size_t i, std::size_t j) { return 1.0 / std::sqrt(deg[i] * deg[j]); };
  for (std::size_t i = 0; i < n; ++i) {
    deg[i] = static_cast<double>(neighbors[i].size() + 1);
    m.row_offsets[i + 1] = m.row_offsets[i] + neighbors[i].size() + 1;
  }
  m.col_indices.reserve(m.row_offsets[n]);
  m.values.reserve(m.row_offsets[n]);
  for (std::size_t i = 0; i < n; ++i) {
    bool self_done = false;
    for (NodeId j : neighbors[i]) {
      if (!self_done && j > i) {
        m.col_indices.push_back(static_cast<NodeId>(i));
        m.values.push_back(weight(i, i));
        self_done = true;
      }
      m.col_indices.push_back(j);
      m.values.push_back(weight(i, j));
    }
    if (!self_done) {
      m.col_indices.push_back(static_cast<NodeId>(i));
      m.values.push_back(weight(i, i));
    }
  }
  return m;
}

std::vector<std::vector<NodeId>> adjacency_lists(std::span<const Edge> edges, std::size_t n) {
  std::vector<std::vector<NodeId>> adj(n);
  for (const auto& [s, d] : canonical_edges(edges)) {
    if (s >= n || d >= n) {
      throw DataError("edge (" + std::to_string(s) + "," + std::to_string(d) + ") outside " +
                      std::to_string(n) + " nodes");
    }
    adj[s].push_back(d);
  }
  return adj;
}

void check_square_input(const SparseMatrix& m, const Tensor& x, const char* op) {
  if (m.cols != x.rows() || x.rank() > 2) {
    throw DimensionError(std::string(op) + ": sparse " + std::to_string(m.rows) + "x" +
                         std::to_string(m.cols) + " with dense " + shape_string(x.shape()));
  }
}

}  // namespace

SparseMatrix normalize_adjacency(std::span<const Edge> edges, std::size_t num_nodes) {
  return normalized_with_self_loops(adjacency_lists(edges, num_nodes));
}

HopSet build_hopset(std::span<const Edge> edges, std::size_t num_nodes, std::size_t num_hops,
                    std::size_t max_neighbors_per_hop) {
  if (num_hops < 1) throw ConfigError("hop count must be >= 1");
  const auto adj = adjacency_lists(edges, num_nodes);
  HopSet set;
  set.hops.push_back(normalized_with_self_loops(adj));
  if (num_hops == 1) return set;

  // per_hop[k-2][i]: kept nodes at distance exactly k from i.
  std::vector<std::vector<std::vector<NodeId>>> per_hop(
      num_hops - 1, std::vector<std::vector<NodeId>>(num_nodes));
  std::vector<std::size_t> dist(num_nodes, std::numeric_limits<std::size_t>::max());
  std::vector<NodeId> touched, frontier, next;
  for (std::size_t src = 0; src < num_nodes; ++src) {
    touched.assign(1, static_cast<NodeId>(src));
    frontier.assign(1, static_cast<NodeId>(src));
    dist[src] = 0;
    for (std::size_t k = 1; k <= num_hops && !frontier.empty(); ++k) {
      next.clear();
      for (NodeId u : frontier)
        for (NodeId v : adj[u])
          if (dist[v] == std::numeric_limits<std::size_t>::max()) {
            dist[v] = k;
            touched.push_back(v);
            next.push_back(v);
          }
      if (k >= 2) {
        auto& row = per_hop[k - 2][src];
        row = next;
        std::sort(row.begin(), row.end());
        if (row.size() > max_neighbors_per_hop) row.resize(max_neighbors_per_hop);
      }
      frontier.swap(next);
    }
    for (NodeId t : touched) dist[t] = std::numeric_limits<std::size_t>::max();
  }

  for (std::size_t k = 2; k <= num_hops; ++k) {
    auto& rows = per_hop[k - 2];
    std::vector<std::vector<NodeId>> sym(num_nodes);
    for (std::size_t i = 0; i < num_nodes; ++i)
      for (NodeId j : rows[i]) {
        sym[i].push_back(j);
        sym[j].push_back(static_cast<NodeId>(i));
      }
    std::size_t off_diagonal = 0;
    for (auto& r : sym) {
      std::sort(r.begin(), r.end());
      r.erase(std::unique(r.begin(), r.end()), r.end());
      off_diagonal += r.size();
    }
    if (off_diagonal == 0) {
      spdlog::warn("hop level {} has no node pairs (exceeds graph diameter); it carries self-loops only", k);
    }
    set.hops.push_back(normalized_with_self_loops(sym));
  }
  return set;
}

Tensor spmm(const SparseMatrix& m, const Tensor& x) {
  check_square_input(m, x, "spmm");
  const std::size_t d = x.cols();
  const auto xv = x.values();
  std::vector<double> out(m.rows * d, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t e = m.row_offsets[i]; e < m.row_offsets[i + 1]; ++e) {
      const double v = m.values[e];
      const double* src = xv.data() + static_cast<std::size_t>(m.col_indices[e]) * d;
      double* dst = out.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += v * src[c];
    }
  return Tensor::make_op("spmm", {m.rows, d}, std::move(out), {x}, [&m, d](const BackwardContext& ctx) {
    std::vector<double> g(ctx.inputs[0].size(), 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
      for (std::size_t e = m.row_offsets[i]; e < m.row_offsets[i + 1]; ++e) {
        const double v = m.values[e];
        double* dst = g.data() + static_cast<std::size_t>(m.col_indices[e]) * d;
        const double* src = ctx.grad.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += v * src[c];
      }
    ctx.inputs[0].accumulate_grad(g);
  });
}

Tensor edge_scores(const SparseMatrix& structure, const Tensor& row_scores, const Tensor& col_scores) {
  if (row_scores.size() != structure.rows || col_scores.size() != structure.cols) {
    throw DimensionError("edge_scores: scores " + shape_string(row_scores.shape()) + " / " +
                         shape_string(col_scores.shape()) + " for " + std::to_string(structure.rows) +
                         "x" + std::to_string(structure.cols) + " structure");
  }
  const auto rv = row_scores.values();
  const auto cv = col_scores.values();
  std::vector<double> out(structure.nnz());
  for (std::size_t i = 0; i < structure.rows; ++i)
    for (std::size_t e = structure.row_offsets[i]; e < structure.row_offsets[i + 1]; ++e)
      out[e] = rv[i] + cv[structure.col_indices[e]];
  return Tensor::make_op("edge_scores", {structure.nnz(), 1}, std::move(out), {row_scores, col_scores},
                         [&structure](const BackwardContext& ctx) {
                           std::vector<double> gr(structure.rows, 0.0), gc(structure.cols, 0.0);
                           for (std::size_t i = 0; i < structure.rows; ++i)
                             for (std::size_t e = structure.row_offsets[i]; e < structure.row_offsets[i + 1]; ++e) {
                               gr[i] += ctx.grad[e];
                               gc[structure.col_indices[e]] += ctx.grad[e];
                             }
                           ctx.inputs[0].accumulate_grad(gr);
                           ctx.inputs[1].accumulate_grad(gc);
                         });
}

Tensor segment_softmax(const SparseMatrix& structure, const Tensor& edge_values) {
  if (edge_values.size() != structure.nnz()) {
    throw DimensionError("segment_softmax: " + std::to_string(edge_values.size()) + " values for " +
                         std::to_string(structure.nnz()) + " entries");
  }
  const auto v = edge_values.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < structure.rows; ++i) {
    const std::size_t b = structure.row_offsets[i], e = structure.row_offsets[i + 1];
    if (b == e) throw DegenerateRowError(i, "segment_softmax (row without entries)");
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t t = b; t < e; ++t) hi = std::max(hi, v[t]);
    double total = 0.0;
    for (std::size_t t = b; t < e; ++t) {
      out[t] = std::exp(v[t] - hi);
      total += out[t];
    }
    for (std::size_t t = b; t < e; ++t) out[t] /= total;
  }
  return Tensor::make_op("segment_softmax", edge_values.shape(), std::move(out), {edge_values},
                         [&structure](const BackwardContext& ctx) {
                           std::vector<double> g(ctx.value.size());
                           for (std::size_t i = 0; i < structure.rows; ++i) {
                             const std::size_t b = structure.row_offsets[i], e = structure.row_offsets[i + 1];
                             double dot = 0.0;
                             for (std::size_t t = b; t < e; ++t) dot += ctx.grad[t] * ctx.value[t];
                             for (std::size_t t = b; t < e; ++t) g[t] = ctx.value[t] * (ctx.grad[t] - dot);
                           }
                           ctx.inputs[0].accumulate_grad(g);
                         });
}

Tensor edge_aggregate(const SparseMatrix& structure, const Tensor& edge_weights, const Tensor& x) {
  check_square_input(structure, x, "edge_aggregate");
  if (edge_weights.size() != structure.nnz()) {
    throw DimensionError("edge_aggregate: " + std::to_string(edge_weights.size()) + " weights for " +
                         std::to_string(structure.nnz()) + " entries");
  }
  const std::size_t d = x.cols();
  const auto w = edge_weights.values();
  const auto xv = x.values();
  std::vector<double> out(structure.rows * d, 0.0);
  for (std::size_t i = 0; i < structure.rows; ++i)
    for (std::size_t e = structure.row_offsets[i]; e < structure.row_offsets[i + 1]; ++e) {
      const double* src = xv.data() + static_cast<std::size_t>(structure.col_indices[e]) * d;
      double* dst = out.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += w[e] * src[c];
    }
  return Tensor::make_op(
      "edge_aggregate", {structure.rows, d}, std::move(out), {edge_weights, x},
      [&structure, d](const BackwardContext& ctx) {
        const Tensor& tw = ctx.inputs[0];
        const Tensor& tx = ctx.inputs[1];
        const auto w = tw.values();
        const auto xv = tx.values();
        std::vector<double> gw(tw.requires_grad() ? tw.size() : 0, 0.0);
        std::vector<double> gx(tx.requires_grad() ? tx.size() : 0, 0.0);
        for (std::size_t i = 0; i < structure.rows; ++i)
          for (std::size_t e = structure.row_offsets[i]; e < structure.row_offsets[i + 1]; ++e) {
            const std::size_t j = structure.col_indices[e];
            const double* gi = ctx.grad.data() + i * d;
            if (!gw.empty()) {
              double s = 0.0;
              for (std::size_t c = 0; c < d; ++c) s += gi[c] * xv[j * d + c];
              gw[e] = s;
            }
            if (!gx.empty())
              for (std::size_t c = 0; c < d; ++c) gx[j * d + c] += w[e] * gi[c];
          }
        if (!gw.empty()) tw.accumulate_grad(gw);
        if (!gx.empty()) tx.accumulate_grad(gx);
      });
}

}  // namespace grafuse
