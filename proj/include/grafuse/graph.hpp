#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "grafuse/tensor.hpp"

namespace grafuse {

using NodeId = std::uint32_t;
using Edge = std::pair<NodeId, NodeId>;

enum class Split : std::uint8_t { kUnused = 0, kTrain = 1, kVal = 2, kTest = 3 };

/// Immutable node-classification dataset.
///
/// `edges` holds both directions of every undirected edge, sorted by
/// (src, dst), without duplicates or self-loops. `split` assigns each node to
/// at most one of train/val/test, which makes the masks disjoint by construction.
struct GraphBundle {
  std::size_t num_nodes = 0;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::vector<double> features;  // num_nodes x feature_dim, row-major
  std::vector<Edge> edges;
  std::vector<std::uint16_t> labels;
  std::vector<Split> split;

  std::size_t num_undirected_edges() const { return edges.size() / 2; }
  std::vector<NodeId> nodes_in(Split s) const;
  Tensor feature_tensor() const;

  /// Throws DataError naming the first violated invariant.
  void validate() const;

  friend bool operator==(const GraphBundle&, const GraphBundle&) = default;
};

/// Symmetrizes, deduplicates, drops self-loops and sorts an edge list.
std::vector<Edge> canonical_edges(std::span<const Edge> edges);

/// Compressed sparse row matrix. Column indices sorted and unique per row.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_offsets;  // rows + 1 entries
  std::vector<NodeId> col_indices;
  std::vector<double> values;

  std::size_t nnz() const { return col_indices.size(); }
  bool empty() const { return nnz() == 0; }
  /// Value at (r, c), 0 when absent.
  double get(std::size_t r, std::size_t c) const;
  std::vector<double> to_dense() const;
  static SparseMatrix identity(std::size_t n);

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;
};

/// D^-1/2 (A + I) D^-1/2 over the undirected edge list.
SparseMatrix normalize_adjacency(std::span<const Edge> edges, std::size_t num_nodes);

/// Exactly-k-hop structure for k = 1..K, each level holding self-loops and
/// independently normalized. hops[0] is the k = 1 level.
struct HopSet {
  std::vector<SparseMatrix> hops;

  std::size_t num_hops() const { return hops.size(); }
  const SparseMatrix& hop(std::size_t k) const { return hops.at(k - 1); }
};

/// Hop 1 is the full normalized adjacency. For k >= 2 each node keeps its
/// `max_neighbors_per_hop` lowest-id nodes at shortest-path distance exactly k;
/// the kept pairs are then symmetrized (union) before normalization.
HopSet build_hopset(std::span<const Edge> edges, std::size_t num_nodes, std::size_t num_hops,
                    std::size_t max_neighbors_per_hop);

/// Sparse (constant) times dense; gradient flows to `x` only.
Tensor spmm(const SparseMatrix& m, const Tensor& x);

// ---- edge-level operations over a sparse structure (values ignored) -----
// The structure (and the matrix passed to spmm) is referenced by the tape and
// must outlive any backward() through the result.

/// score[e] = source_scores[row(e)] + target_scores[col(e)] for every stored entry e.
Tensor edge_scores(const SparseMatrix& structure, const Tensor& row_scores,
                   const Tensor& col_scores);

/// Softmax of edge values within each row's segment.
Tensor segment_softmax(const SparseMatrix& structure, const Tensor& edge_values);

/// out[i] = sum_e in row i  weights[e] * x[col(e)].
Tensor edge_aggregate(const SparseMatrix& structure, const Tensor& edge_weights, const Tensor& x);

// ---- synthetic fixtures --------------------------------------------------

struct SbmConfig {
  std::vector<std::size_t> block_sizes;
  /// One entry, or one per block.
  std::vector<double> p_in;
  double p_out = 0.0;
  std::size_t feature_dim = 16;
  /// Norm of each class mean vector. One entry, or one per block.
  std::vector<double> class_signal;
  std::uint64_t seed = 0;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
};

/// Planted-partition graph with Gaussian class-conditional features
/// (features rounded to f32 so bundle files round-trip exactly) and stratified
/// train/val/test masks.
GraphBundle generate_sbm(const SbmConfig& config);
GraphBundle generate_sbm(std::span<const std::size_t> block_sizes, double p_in, double p_out,
                         std::size_t feature_dim, double class_signal, std::uint64_t seed);

}  // namespace grafuse
