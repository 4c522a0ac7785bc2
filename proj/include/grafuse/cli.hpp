#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grafuse/fusion.hpp"
#include "grafuse/graph.hpp"
#include "grafuse/models.hpp"
#include "grafuse/training.hpp"
#include "grafuse/transport.hpp"

namespace grafuse::cli {

struct FusionSection {
  std::vector<FusionStrategy> strategies{FusionStrategy::kFixed, FusionStrategy::kAdaptive};
  std::vector<double> base_gnn_weights;  // empty: class-count defaults
  std::vector<double> balance;
  std::vector<double> lambda;
  bool train_projections = true;
  /// false zeroes every lambda (no-WR-loss ablation).
  bool wr_loss = true;
  TrainConfig train{AdamConfig{}, 200, 50};
};

/// Resolved settings of one command. Built from a JSON document (config file
/// with flag overrides applied on top); unknown keys are rejected.
struct RunConfig {
  std::string command;
  std::filesystem::path data, out, checkpoint, gnn, gat;
  std::uint64_t seed = 42;
  ModelConfig model;
  TrainConfig train;
  FusionSection fusion;
  WrLossConfig transport;
  SbmConfig sbm;

  /// Sections relevant to `command`, with defaults filled in.
  nlohmann::ordered_json to_json() const;
};

RunConfig parse_run_config(const nlohmann::json& doc, const std::string& command);

/// Entry point shared by the executable and the tests. Returns the exit code:
/// 0 ok, 1 config, 2 data, 3 numeric, 4 internal.
int run(int argc, const char* const* argv);

int cmd_train(const RunConfig& cfg);
int cmd_fuse(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_export(const RunConfig& cfg);
int cmd_gen_sbm(const RunConfig& cfg);
int cmd_validate_bundle(const RunConfig& cfg);

}  // namespace grafuse::cli
