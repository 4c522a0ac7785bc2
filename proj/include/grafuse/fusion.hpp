#pragma once

// Two-expert prediction fusion: fixed per-class weights, per-node confidence
// weights, and the WR-guided variant that mixes both and feeds each expert's
// head through class-specific projections aligned by a transport loss.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "grafuse/models.hpp"
#include "grafuse/training.hpp"
#include "grafuse/transport.hpp"

namespace grafuse {

enum class FusionStrategy { kFixed = 0, kAdaptive = 1, kWr = 2 };

std::string_view strategy_name(FusionStrategy s);
FusionStrategy parse_strategy(std::string_view name);

/// Proj(x) = x + relu(x W1 + b1) W2 + b2. W2 and b2 start at zero, so a fresh
/// projection is the identity.
struct ClassProjection {
  Tensor w1, b1, w2, b2;

  static ClassProjection identity(std::size_t dim, std::uint64_t seed, std::size_t class_id);
  Tensor apply(const Tensor& x) const;
};

struct FusionPolicy {
  FusionStrategy strategy = FusionStrategy::kFixed;
  /// Per-class GNN weight; the GAT weight is 1 - base_gnn[c].
  std::vector<double> base_gnn;
  /// Per-class balance alpha_c between base weights and confidence weights.
  std::vector<double> balance;
  /// One projection per class, shared by both experts; empty = identity.
  std::vector<ClassProjection> projections;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return base_gnn.size(); }
  /// Defaults: GNN weight 0.95 for classes 0/1 and 0.2 for class 2 with three
  /// classes (0.5 otherwise); alpha_c = 0.7.
  static FusionPolicy defaults(std::size_t num_classes);
  void validate() const;
  std::vector<Parameter> projection_parameters() const;
};

struct FusedPrediction {
  Tensor probs;                   // n x C, rows sum to 1
  std::vector<double> gnn_weight;  // n x C applied GNN weights (GAT gets 1 - w)
  FusionStrategy strategy = FusionStrategy::kFixed;

  double mean_gat_weight(std::size_t class_id, std::span<const std::uint32_t> ids) const;
};

/// Differentiable core shared by every strategy. Per node i and class c:
///   r_i = conf_gnn / (conf_gnn + conf_gat),  conf = row max
///   w_ic = alpha_c * base_c + (1 - alpha_c) * r_i
///   u_ic = w_ic p_gnn + (1 - w_ic) p_gat, rows renormalized.
/// alpha = 1 gives fixed weights, alpha = 0 confidence weights.
Tensor fuse_probabilities(const Tensor& p_gnn, const Tensor& p_gat, const std::vector<double>& base_gnn,
                          const std::vector<double>& balance, std::vector<double>* applied = nullptr);

/// Throws DataError if any row is negative or off 1 by more than 1e-6.
void check_stochastic(const Tensor& p, const char* what);

FusedPrediction fixed_fuse(const Tensor& p_gnn, const Tensor& p_gat, const FusionPolicy& policy);
FusedPrediction adaptive_fuse(const Tensor& p_gnn, const Tensor& p_gat);

/// Frozen expert outputs in eval mode.
struct ExpertOutputs {
  Tensor gnn_embed, gat_embed;
  Tensor p_gnn, p_gat;
};
ExpertOutputs run_experts(const Model& gnn, const Model& gat, const GraphContext& ctx);

/// Expert probabilities where class c's logit comes from head(Proj_c(embedding)).
Tensor projected_probs(const Model& expert, const GraphContext& ctx, const Tensor& embedding,
                       const std::vector<ClassProjection>& projections);

FusedPrediction wr_fuse(const Model& gnn, const Model& gat, const GraphContext& ctx, const ExpertOutputs& experts,
                        const FusionPolicy& policy);

struct FusionTrainConfig {
  TrainConfig train;
  /// Per-class WR loss weights; empty picks the defaults (0.01, 0.01, 0.1 for
  /// three classes, else 0.01 everywhere).
  std::vector<double> lambda;
  WrLossConfig wr;
  /// false keeps identity projections (no-projection ablation).
  bool train_projections = true;

  std::vector<double> resolved_lambda(std::size_t num_classes) const;
};

struct FusionTrainResult {
  FusionPolicy policy;
  TrainResult training;
  /// Per-class W_p between projected expert embeddings on the train mask,
  /// before and after training.
  std::vector<double> wr_before, wr_after;
};

/// Trains the per-class projections with fused cross-entropy on the train
/// mask plus sum_c lambda_c * WR_c; early-stops on validation accuracy of
/// wr_fuse. The experts are left unchanged.
FusionTrainResult train_wr_heads(Model& gnn, Model& gat, const GraphContext& ctx, const GraphBundle& bundle,
                                 const ExpertOutputs& experts, FusionPolicy policy, const FusionTrainConfig& config);

/// W_p between projected embeddings of one class's train nodes.
double class_wr_distance(const ExpertOutputs& experts, const FusionPolicy& policy, const GraphBundle& bundle,
                         std::uint16_t class_id, const WrLossConfig& config);

struct StrategyEvaluation {
  FusionStrategy strategy = FusionStrategy::kFixed;
  MetricsReport val;
};

/// Highest validation accuracy; ties by lower validation CV, then by the
/// order fixed < adaptive < wr. Returns an index into `candidates`.
std::size_t select_strategy(const std::vector<StrategyEvaluation>& candidates);

void save_policy(const FusionPolicy& policy, const std::filesystem::path& dir);
FusionPolicy load_policy(const std::filesystem::path& dir);

}  // namespace grafuse
