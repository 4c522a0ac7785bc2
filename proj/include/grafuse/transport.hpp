#pragma once

// Optimal-transport distance W_p between weighted point clouds.
//
// exact_wr is a small-instance oracle; sinkhorn_wr is the entropic solver used
// in training. Both report the sharp plan cost <gamma, C>^(1/p).

#include <cstdint>
#include <span>
#include <vector>

#include "grafuse/graph.hpp"
#include "grafuse/tensor.hpp"

namespace grafuse {

struct DiscreteCloud {
  Tensor points;                // m x d
  std::vector<double> weights;  // non-negative, sums to 1

  static DiscreteCloud uniform(Tensor points);
  std::size_t size() const { return points.rows(); }
  std::size_t dim() const { return points.cols(); }
  void validate() const;
};

struct TransportPlan {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> coupling;  // rows x cols, row-major
  double cost = 0.0;             // <coupling, C>
  bool converged = true;
  std::size_t iterations = 0;
  std::vector<double> cost_trace;  // plan cost after each sweep, when requested

  double at(std::size_t i, std::size_t j) const { return coupling[i * cols + j]; }
  std::vector<double> row_sums() const;
  std::vector<double> col_sums() const;
};

struct WrResult {
  double distance = 0.0;
  TransportPlan plan;
};

/// C[i][j] = ||x_i - y_j||_2^p, row-major m x n.
std::vector<double> cost_matrix(const DiscreteCloud& a, const DiscreteCloud& b, double p);

/// Largest m*n accepted by exact_wr.
inline constexpr std::size_t kExactWrMaxCells = 64;

/// Exact optimum. Equal-size uniform clouds are solved by exhaustive matching,
/// anything else by successive shortest paths on the transport network.
WrResult exact_wr(const DiscreteCloud& a, const DiscreteCloud& b, double p = 2.0);
/// The min-cost-flow route regardless of cloud shape (exposed for cross-checks).
WrResult exact_wr_flow(const DiscreteCloud& a, const DiscreteCloud& b, double p = 2.0);

struct SinkhornOptions {
  /// Absolute regularization. When <= 0, epsilon_scale * median(C) is used.
  double epsilon = 0.0;
  double epsilon_scale = 0.05;
  std::size_t max_iters = 200;
  double tol = 1e-6;
  bool record_trace = false;
};

/// Log-domain entropic solver. plan.converged is false when the row-marginal
/// L1 error still exceeds tol after max_iters sweeps.
WrResult sinkhorn_wr(const DiscreteCloud& a, const DiscreteCloud& b, double p = 2.0,
                     const SinkhornOptions& options = {});

/// (sum_ij plan_ij ||x_i - y_j||^p)^(1/p) as a differentiable op of x and y
/// with the plan held fixed (envelope gradient).
Tensor transport_cost(const Tensor& x, const Tensor& y, std::vector<double> plan, double p = 2.0);

struct WrLossConfig {
  double p = 2.0;
  double epsilon_scale = 0.05;
  std::size_t max_iters = 200;
  double tol = 1e-6;
  std::size_t sample_size = 128;
  std::uint64_t seed = 0;
};

/// Train nodes of `class_id`, subsampled to at most sample_size (sorted ids);
/// the subsample is a pure function of (seed, epoch, class_id).
std::vector<std::uint32_t> sample_class_nodes(std::span<const std::uint16_t> labels, std::span<const Split> split,
                                              std::uint16_t class_id, std::size_t sample_size, std::uint64_t seed,
                                              std::uint64_t epoch);

/// W_p between the two models' embeddings of the sampled class-c train nodes.
/// Gradients reach both embeddings through the fixed Sinkhorn plan. Returns a
/// zero scalar (and logs a warning) when fewer than two nodes are available.
Tensor class_wr_loss(const Tensor& gnn_embed, const Tensor& gat_embed, std::span<const std::uint16_t> labels,
                     std::span<const Split> split, std::uint16_t class_id, const WrLossConfig& config,
                     std::uint64_t epoch = 0);

}  // namespace grafuse
