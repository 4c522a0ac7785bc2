#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grafuse/graph.hpp"
#include "grafuse/models.hpp"
#include "grafuse/tensor.hpp"

namespace grafuse {

// ---- optimization ----------------------------------------------------------

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// L2 penalty added to the gradient of decay-flagged parameters.
  double weight_decay = 5e-4;
};

class Adam {
 public:
  Adam(std::vector<Parameter>& params, AdamConfig config);
  /// One update from the gradients currently stored on the parameters.
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Parameter>* params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  AdamConfig optimizer;
  std::size_t max_epochs = 500;
  std::size_t patience = 50;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0: the initial parameters were never beaten
  double best_val_acc = 0.0;
  bool early_stopped = false;
};

/// Per-epoch hook on the optimization loop. Receives the epoch number
/// (1-based) and returns the training loss to minimize.
using LossFn = std::function<Tensor(std::size_t epoch)>;
/// Validation accuracy of the current parameters.
using ValidationFn = std::function<double()>;

/// Generic loop: Adam on `params`, best-validation snapshot, patience-based
/// early stopping. The best snapshot is restored before returning. A
/// non-finite loss restores the last good snapshot and throws NumericError.
TrainResult optimize(std::vector<Parameter>& params, const TrainConfig& config, const LossFn& loss,
                     const ValidationFn& validate);

/// Cross-entropy on the train mask for a model.
TrainResult train_model(Model& model, const GraphContext& ctx, const GraphBundle& bundle, const TrainConfig& config);

void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

// ---- metrics ---------------------------------------------------------------

struct ClassMetrics {
  std::size_t support = 0;  // true members among evaluated nodes
  double accuracy = 0.0;    // correct members / support
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  std::size_t count = 0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  /// Population CV of per-class accuracies over classes with support;
  /// empty when undefined (fewer than two such classes or zero mean).
  std::optional<double> cv;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  std::vector<double> class_accuracies() const;
  nlohmann::ordered_json to_json() const;
  std::string table(const std::string& title = "") const;
};

/// Row argmax (lowest index on ties).
std::vector<std::uint16_t> argmax_rows(const Tensor& scores);

MetricsReport evaluate_predictions(std::span<const std::uint16_t> predicted, std::span<const std::uint16_t> labels,
                                   std::span<const std::uint32_t> ids, std::size_t num_classes);
/// Argmax of `scores` on the nodes in `split`. Empty split is a contract error.
MetricsReport evaluate(const Tensor& scores, const GraphBundle& bundle, Split split);

/// Population (default) or sample standard deviation over the mean.
double coefficient_of_variation(std::span<const double> values, bool sample = false);

/// Mean silhouette coefficient of rows of `points` grouped by label.
double silhouette_score(const Tensor& points, std::span<const std::uint16_t> labels);

// ---- embedding export ------------------------------------------------------

/// embeddings.f32 (n x dim little-endian f32), labels.u16 and meta.json.
void export_embeddings(const Tensor& embeddings, std::span<const std::uint16_t> labels,
                       const std::filesystem::path& dir, const std::string& source = "");

struct ExportedEmbeddings {
  std::size_t num_nodes = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  std::vector<std::uint16_t> labels;
};
ExportedEmbeddings read_embeddings(const std::filesystem::path& dir);

}  // namespace grafuse
