#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "grafuse/graph.hpp"
#include "grafuse/tensor.hpp"

namespace grafuse {

enum class ModelKind { kGcn, kResidualGnn, kMultiHopGat };

/// CLI names: "gcn", "gnn", "mhgat".
std::string_view model_kind_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct ModelConfig {
  ModelKind kind = ModelKind::kGcn;
  /// Hidden width; for the attention model this is the width of one head.
  /// 0 picks the kind default (gcn 16, gnn 64, mhgat 32).
  std::size_t hidden = 0;
  std::size_t heads = 2;
  std::size_t hops = 2;
  std::size_t max_neighbors = 64;
  /// Negative picks the kind default (gcn 0.5, gnn 0.3, mhgat 0.3).
  double dropout = -1.0;
  double leaky_slope = 0.2;
  double norm_eps = 1e-5;
  std::uint64_t seed = 0;

  /// Copy with every "kind default" placeholder resolved.
  ModelConfig resolved() const;
};

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = true;  // subject to weight decay
};

/// Everything a forward pass reads from the dataset. Built once per run and
/// kept alive while any tape built from it is in use.
struct GraphContext {
  std::size_t num_nodes = 0;
  std::size_t num_classes = 0;
  Tensor features;
  SparseMatrix adjacency;  // normalized, self-loops included
  HopSet hopset;           // empty unless hop structure was requested

  static GraphContext build(const GraphBundle& bundle, std::size_t hops = 0,
                            std::size_t max_neighbors = 64);
};

struct ForwardMode {
  bool train = false;
  std::uint64_t epoch = 0;
};

/// Common surface of the three expert classifiers. A forward pass is
/// head(embed(x)); embed() exposes the penultimate representation.
class Model {
 public:
  virtual ~Model() = default;

  virtual ModelKind kind() const = 0;
  const ModelConfig& config() const { return config_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t num_classes() const { return num_classes_; }
  virtual std::size_t embedding_dim() const = 0;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  virtual Tensor embed(const GraphContext& ctx, ForwardMode mode) const = 0;
  virtual Tensor head(const GraphContext& ctx, const Tensor& embedding, ForwardMode mode) const = 0;
  Tensor forward(const GraphContext& ctx, ForwardMode mode) const { return head(ctx, embed(ctx, mode), mode); }

  /// Hop count the context must provide (0 when only the adjacency is used).
  virtual std::size_t required_hops() const { return 0; }

 protected:
  Model(const ModelConfig& config, std::size_t feature_dim, std::size_t num_classes);

  Tensor& add_parameter(std::string name, Shape shape, bool decay, double fill);
  Tensor& add_glorot(std::string name, std::size_t fan_in, std::size_t fan_out);
  const Tensor& param(std::size_t index) const { return params_[index].value; }
  DropoutKey dropout_key(ForwardMode mode, std::uint64_t layer) const {
    return {config_.seed, mode.epoch, layer};
  }
  void check_context(const GraphContext& ctx) const;

  ModelConfig config_;
  std::size_t feature_dim_;
  std::size_t num_classes_;
  std::vector<Parameter> params_;
};

/// Two-layer spectral GCN: A relu(A X W0 + b0) W1 + b1.
class GcnModel final : public Model {
 public:
  GcnModel(const ModelConfig& config, std::size_t feature_dim, std::size_t num_classes);
  ModelKind kind() const override { return ModelKind::kGcn; }
  std::size_t embedding_dim() const override { return config_.hidden; }
  Tensor embed(const GraphContext& ctx, ForwardMode mode) const override;
  Tensor head(const GraphContext& ctx, const Tensor& embedding, ForwardMode mode) const override;
};

/// GCN with layer norm and a residual path on the hidden layer:
///   h = relu(LN(A X W0 + b0)) + X R     (R identity when widths agree)
///   logits = A h W1 + b1
class ResidualGnnModel final : public Model {
 public:
  ResidualGnnModel(const ModelConfig& config, std::size_t feature_dim, std::size_t num_classes);
  ModelKind kind() const override { return ModelKind::kResidualGnn; }
  std::size_t embedding_dim() const override { return config_.hidden; }
  Tensor embed(const GraphContext& ctx, ForwardMode mode) const override;
  Tensor head(const GraphContext& ctx, const Tensor& embedding, ForwardMode mode) const override;

 private:
  bool projected_residual_;
};

/// One attention head: W (in x out), and the two halves of the scoring vector
/// a = [a_src ; a_dst] applied to the aggregating node and its neighbor.
struct AttentionHead {
  Tensor weight;
  Tensor a_src;
  Tensor a_dst;
};

/// Node-level attention over the stored entries of `structure` (self-loops
/// included): out_i = sum_j alpha_ij W h_j with
/// alpha_i. = softmax_j(LeakyReLU(a_src . W h_i + a_dst . W h_j)).
Tensor gat_attention(const Tensor& h, const SparseMatrix& structure, const AttentionHead& head,
                     double slope = 0.2);

/// Attention coefficients (one per stored entry of `structure`) of one head.
Tensor gat_coefficients(const Tensor& h, const SparseMatrix& structure, const AttentionHead& head,
                        double slope = 0.2);

/// Multi-hop attention network. Per hop k, `heads` attention heads over the
/// exactly-k-hop structure are concatenated; hops are mixed with learnable
/// softmax weights; then layer norm, ELU and a residual projection of the
/// input give the embedding. The output layer is a `heads`-head attention
/// layer over hop 1 whose heads are averaged.
class MultiHopGatModel final : public Model {
 public:
  MultiHopGatModel(const ModelConfig& config, std::size_t feature_dim, std::size_t num_classes);
  ModelKind kind() const override { return ModelKind::kMultiHopGat; }
  std::size_t embedding_dim() const override { return config_.hidden * config_.heads; }
  std::size_t required_hops() const override { return config_.hops; }
  Tensor embed(const GraphContext& ctx, ForwardMode mode) const override;
  Tensor head(const GraphContext& ctx, const Tensor& embedding, ForwardMode mode) const override;

  /// softmax over the hop logits, 1 x K.
  Tensor hop_weights() const;
  /// Sum_k hop_weights[k] * concat_heads(attention over hop k), before normalization.
  Tensor hop_mixture(const GraphContext& ctx, const Tensor& input) const;
  AttentionHead hidden_head(std::size_t hop, std::size_t head) const;
  Tensor& hop_logits() { return params_[hop_logits_index_].value; }

 private:
  std::size_t hop_logits_index_ = 0;
  std::size_t first_output_head_ = 0;
};

std::unique_ptr<Model> make_model(const ModelConfig& config, std::size_t feature_dim,
                                  std::size_t num_classes);

// ---- checkpoints -----------------------------------------------------------
// meta.json (kind, dims, seed, epoch, parameter table) + params.bin
// (little-endian f64 tensors in declaration order).

void save_checkpoint(const Model& model, const std::filesystem::path& dir, std::uint64_t epoch);

struct LoadedModel {
  std::unique_ptr<Model> model;
  std::uint64_t epoch = 0;
};
LoadedModel load_checkpoint(const std::filesystem::path& dir);

/// Copies parameter values (shapes must match).
void copy_parameters(const std::vector<Parameter>& from, std::vector<Parameter>& to);
std::vector<std::vector<double>> snapshot_parameters(const std::vector<Parameter>& params);
void restore_parameters(const std::vector<std::vector<double>>& snapshot, std::vector<Parameter>& params);

/// Writes parameters back-to-back as little-endian f64.
std::string encode_parameters(const std::vector<Parameter>& params);
/// Fills parameters from encode_parameters() output; throws DataError on size mismatch.
void decode_parameters(std::string_view bytes, std::vector<Parameter>& params, const std::string& source);

}  // namespace grafuse
