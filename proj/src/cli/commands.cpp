#include <algorithm>
#include <cstdio>
#include <deque>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "grafuse/cli.hpp"
#include "grafuse/error.hpp"
#include "grafuse/io.hpp"

namespace grafuse::cli {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---- strict JSON reading ---------------------------------------------------

class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    out = convert<T>(j_.at(key), key);
  }

  void read(const char* key, fs::path& out) {
    std::string s;
    read(key, s);
    if (j_.contains(key)) out = s;
  }

  const json& child(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + path(k.c_str()) + "'");
    }
  }

 private:
  std::string label() const { return where_.empty() ? "config" : "'" + where_ + "'"; }

  template <typename T>
  T convert(const json& v, const char* key) const {
    const auto bad = [&](const char* want) { return ConfigError("'" + path(key) + "' must be " + want); };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw bad("a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw bad("a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw bad("a number");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw bad("a non-negative integer");
      return v.get<T>();
    } else {
      if (!v.is_array()) throw bad("an array");
      T out;
      for (const auto& e : v) out.push_back(convert<typename T::value_type>(e, key));
      return out;
    }
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_train(Section s, TrainConfig& t) {
  s.read("lr", t.optimizer.lr);
  s.read("weight_decay", t.optimizer.weight_decay);
  s.read("max_epochs", t.max_epochs);
  s.read("patience", t.patience);
  s.finish();
}

ordered_json train_json(const TrainConfig& t) {
  return {{"lr", t.optimizer.lr},
          {"weight_decay", t.optimizer.weight_decay},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience}};
}

void check_unit_interval(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError(std::string(what) + " entries must lie in [0,1]");
}

// ---- command helpers -------------------------------------------------------

void require(const fs::path& p, const char* flag) {
  if (p.empty()) throw ConfigError(std::string(flag) + " is required");
}

GraphBundle load_bundle(const fs::path& p) {
  require(p, "--data");
  if (!fs::is_directory(p)) throw DataError("bundle " + p.string() + " not found");
  return read_bundle(p);
}

/// A train run directory holds its checkpoint under checkpoint/; a bare
/// checkpoint directory is accepted too.
fs::path checkpoint_dir(const fs::path& p) {
  if (fs::exists(p / "checkpoint" / "meta.json")) return p / "checkpoint";
  return p;
}

LoadedModel load_model(const fs::path& p, const char* flag, const GraphBundle& bundle) {
  require(p, flag);
  if (!fs::is_directory(p)) throw DataError(std::string(flag) + " " + p.string() + " not found");
  auto loaded = load_checkpoint(checkpoint_dir(p));
  const Model& m = *loaded.model;
  if (m.feature_dim() != bundle.feature_dim || m.num_classes() != bundle.num_classes) {
    throw DataError("checkpoint " + p.string() + " expects " + std::to_string(m.feature_dim()) + " features / " +
                    std::to_string(m.num_classes()) + " classes, bundle has " + std::to_string(bundle.feature_dim) +
                    " / " + std::to_string(bundle.num_classes));
  }
  return loaded;
}

void prepare_out(const RunConfig& cfg) {
  require(cfg.out, "--out");
  fs::create_directories(cfg.out);
  write_json(cfg.out / "effective_config.json", cfg.to_json());
}

constexpr std::pair<Split, const char*> kSplits[] = {
    {Split::kTrain, "train"}, {Split::kVal, "val"}, {Split::kTest, "test"}};

ordered_json split_reports(const Tensor& scores, const GraphBundle& bundle) {
  ordered_json j = ordered_json::object();
  for (auto [split, name] : kSplits)
    if (!bundle.nodes_in(split).empty()) j[name] = evaluate(scores, bundle, split).to_json();
  return j;
}

ordered_json model_metrics(const Model& model, const GraphContext& ctx, const GraphBundle& bundle,
                           std::uint64_t epoch) {
  ordered_json j;
  j["model"] = model_kind_name(model.kind());
  j["epoch"] = epoch;
  j["splits"] = split_reports(model.forward(ctx, {}), bundle);
  return j;
}

void print_model_tables(const Model& model, const GraphContext& ctx, const GraphBundle& bundle) {
  const Tensor scores = model.forward(ctx, {});
  for (auto [split, name] : kSplits)
    if (!bundle.nodes_in(split).empty())
      std::cout << evaluate(scores, bundle, split).table(std::string(model_kind_name(model.kind())) + " / " + name);
}

struct ComparisonRow {
  std::string name;
  MetricsReport val, test;
};

std::string comparison_table(const std::vector<ComparisonRow>& rows, std::size_t classes) {
  std::ostringstream os;
  char buf[64];
  os << "method        val_acc  test_acc";
  for (std::size_t c = 0; c < classes; ++c) {
    std::snprintf(buf, sizeof buf, "  class%-3zu", c);
    os << buf;
  }
  os << "  test_cv\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-12s  %7.4f  %8.4f", r.name.c_str(), r.val.accuracy, r.test.accuracy);
    os << buf;
    for (double a : r.test.class_accuracies()) {
      std::snprintf(buf, sizeof buf, "  %8.4f", a);
      os << buf;
    }
    if (r.test.cv) {
      std::snprintf(buf, sizeof buf, "  %7.4f\n", *r.test.cv);
    } else {
      std::snprintf(buf, sizeof buf, "  %7s\n", "n/a");
    }
    os << buf;
  }
  return os.str();
}

// ---- flag overrides --------------------------------------------------------

enum class FlagKind { kString, kUint, kDouble, kDoubleList, kUintList, kStringList, kSetTrue, kSetFalse };

struct Flag {
  std::string pointer;
  FlagKind kind;
  std::string value;
  bool set = false;
  CLI::Option* option = nullptr;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

json flag_value(const Flag& f) {
  const auto name = f.option->get_name();
  const auto as_double = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw ConfigError(name + ": '" + s + "' is not a number");
    return v;
  };
  const auto as_uint = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError(name + ": '" + s + "' is not a non-negative integer");
    try {
      return static_cast<std::uint64_t>(std::stoull(s));
    } catch (const std::exception&) {
      throw ConfigError(name + ": '" + s + "' is out of range");
    }
  };
  switch (f.kind) {
    case FlagKind::kString: return f.value;
    case FlagKind::kUint: return as_uint(f.value);
    case FlagKind::kDouble: return as_double(f.value);
    case FlagKind::kSetTrue: return true;
    case FlagKind::kSetFalse: return false;
    case FlagKind::kDoubleList: {
      json a = json::array();
      for (const auto& s : split_list(f.value)) a.push_back(as_double(s));
      return a;
    }
    case FlagKind::kUintList: {
      json a = json::array();
      for (const auto& s : split_list(f.value)) a.push_back(as_uint(s));
      return a;
    }
    case FlagKind::kStringList: {
      json a = json::array();
      for (const auto& s : split_list(f.value)) a.push_back(s);
      return a;
    }
  }
  return nullptr;
}

class FlagSet {
 public:
  void add(CLI::App* app, const std::string& names, const std::string& pointer, FlagKind kind,
           const std::string& help) {
    flags_.push_back({pointer, kind, "", false, nullptr});
    Flag& f = flags_.back();
    if (kind == FlagKind::kSetTrue || kind == FlagKind::kSetFalse) {
      f.option = app->add_flag(names, f.set, help);
    } else {
      f.option = app->add_option(names, f.value, help);
    }
  }

  void apply(json& doc) const {
    for (const auto& f : flags_)
      if (f.option->count() > 0) doc[json::json_pointer(f.pointer)] = flag_value(f);
  }

 private:
  std::deque<Flag> flags_;
};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  if (!fs::is_regular_file(path)) throw ConfigError("config file " + path + " not found");
  try {
    return read_json(path);
  } catch (const DataError& e) {
    throw ConfigError(std::string("config file ") + e.what());
  }
}

void add_common(CLI::App* sub, FlagSet& flags) {
  flags.add(sub, "--data", "/data", FlagKind::kString, "graph bundle directory");
  flags.add(sub, "--out", "/out", FlagKind::kString, "output directory");
  flags.add(sub, "--seed", "/seed", FlagKind::kUint, "seed for initialization, dropout and sampling");
}

void add_train_flags(CLI::App* sub, FlagSet& flags, const std::string& prefix) {
  flags.add(sub, "--lr", prefix + "/lr", FlagKind::kDouble, "Adam learning rate");
  flags.add(sub, "--weight-decay", prefix + "/weight_decay", FlagKind::kDouble, "L2 penalty on weight matrices");
  flags.add(sub, "--epochs", prefix + "/max_epochs", FlagKind::kUint, "maximum epochs");
  flags.add(sub, "--patience", prefix + "/patience", FlagKind::kUint, "early-stopping patience in epochs");
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kConfig: return 1;
    case ErrorKind::kData: return 2;
    case ErrorKind::kNumeric: return 3;
    case ErrorKind::kContract: return 4;
  }
  return 4;
}

}  // namespace

// ---- RunConfig ----------------------------------------------------------------

RunConfig parse_run_config(const json& doc, const std::string& command) {
  RunConfig cfg;
  cfg.command = command;
  Section top(doc, "");
  top.read("data", cfg.data);
  top.read("out", cfg.out);
  top.read("checkpoint", cfg.checkpoint);
  top.read("gnn", cfg.gnn);
  top.read("gat", cfg.gat);
  top.read("seed", cfg.seed);

  if (top.has("model")) {
    Section s(top.child("model"), "model");
    std::string kind = std::string(model_kind_name(cfg.model.kind));
    s.read("kind", kind);
    cfg.model.kind = parse_model_kind(kind);
    s.read("hidden", cfg.model.hidden);
    s.read("heads", cfg.model.heads);
    s.read("hops", cfg.model.hops);
    s.read("max_neighbors", cfg.model.max_neighbors);
    s.read("dropout", cfg.model.dropout);
    s.read("leaky_slope", cfg.model.leaky_slope);
    s.read("norm_eps", cfg.model.norm_eps);
    s.finish();
  }
  cfg.model.seed = cfg.seed;
  if (cfg.model.heads == 0 || cfg.model.hops == 0) throw ConfigError("model.heads and model.hops must be >= 1");
  if (cfg.model.dropout >= 1.0) throw ConfigError("model.dropout must be < 1");
  cfg.model = cfg.model.resolved();

  if (top.has("train")) read_train(Section(top.child("train"), "train"), cfg.train);
  cfg.train.validate();

  if (top.has("fusion")) {
    auto& f = cfg.fusion;
    Section s(top.child("fusion"), "fusion");
    if (s.has("strategies")) {
      std::vector<std::string> names;
      s.read("strategies", names);
      if (names.empty()) throw ConfigError("fusion.strategies must not be empty");
      f.strategies.clear();
      for (const auto& n : names) f.strategies.push_back(parse_strategy(n));
    }
    s.read("base_gnn_weights", f.base_gnn_weights);
    s.read("balance", f.balance);
    s.read("lambda", f.lambda);
    s.read("train_projections", f.train_projections);
    s.read("wr_loss", f.wr_loss);
    s.read("lr", f.train.optimizer.lr);
    s.read("weight_decay", f.train.optimizer.weight_decay);
    s.read("max_epochs", f.train.max_epochs);
    s.read("patience", f.train.patience);
    s.finish();
  }
  {
    auto& st = cfg.fusion.strategies;
    std::sort(st.begin(), st.end());
    st.erase(std::unique(st.begin(), st.end()), st.end());
  }
  check_unit_interval(cfg.fusion.base_gnn_weights, "fusion.base_gnn_weights");
  check_unit_interval(cfg.fusion.balance, "fusion.balance");
  for (double l : cfg.fusion.lambda)
    if (!(l >= 0.0)) throw ConfigError("fusion.lambda entries must be >= 0");
  cfg.fusion.train.validate();

  if (top.has("transport")) {
    Section s(top.child("transport"), "transport");
    s.read("p", cfg.transport.p);
    s.read("epsilon_scale", cfg.transport.epsilon_scale);
    s.read("max_iters", cfg.transport.max_iters);
    s.read("tol", cfg.transport.tol);
    s.read("sample_size", cfg.transport.sample_size);
    s.finish();
  }
  cfg.transport.seed = cfg.seed;
  if (!(cfg.transport.p >= 1.0)) throw ConfigError("transport.p must be >= 1");
  if (!(cfg.transport.epsilon_scale > 0.0)) throw ConfigError("transport.epsilon_scale must be > 0");
  if (cfg.transport.max_iters == 0) throw ConfigError("transport.max_iters must be >= 1");
  if (cfg.transport.sample_size < 2) throw ConfigError("transport.sample_size must be >= 2");

  cfg.sbm.block_sizes = {100, 100, 100};
  cfg.sbm.p_in = {0.9};
  cfg.sbm.p_out = 0.05;
  cfg.sbm.class_signal = {3.0};
  if (top.has("sbm")) {
    Section s(top.child("sbm"), "sbm");
    s.read("block_sizes", cfg.sbm.block_sizes);
    s.read("p_in", cfg.sbm.p_in);
    s.read("p_out", cfg.sbm.p_out);
    s.read("feature_dim", cfg.sbm.feature_dim);
    s.read("class_signal", cfg.sbm.class_signal);
    s.read("train_fraction", cfg.sbm.train_fraction);
    s.read("val_fraction", cfg.sbm.val_fraction);
    s.finish();
  }
  cfg.sbm.seed = cfg.seed;
  top.finish();
  return cfg;
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  const auto path = [&](const char* key, const fs::path& p) { j[key] = p.string(); };
  if (command == "train") {
    path("data", data);
    path("out", out);
    j["seed"] = seed;
    j["model"] = {{"kind", model_kind_name(model.kind)}, {"hidden", model.hidden},
                  {"heads", model.heads},                {"hops", model.hops},
                  {"max_neighbors", model.max_neighbors}, {"dropout", model.dropout},
                  {"leaky_slope", model.leaky_slope},    {"norm_eps", model.norm_eps}};
    j["train"] = train_json(train);
  } else if (command == "fuse") {
    path("data", data);
    path("gnn", gnn);
    path("gat", gat);
    path("out", out);
    j["seed"] = seed;
    ordered_json f;
    f["strategies"] = ordered_json::array();
    for (auto s : fusion.strategies) f["strategies"].push_back(strategy_name(s));
    f["base_gnn_weights"] = fusion.base_gnn_weights;
    f["balance"] = fusion.balance;
    f["lambda"] = fusion.lambda;
    f["train_projections"] = fusion.train_projections;
    f["wr_loss"] = fusion.wr_loss;
    const auto t = train_json(fusion.train);
    for (const auto& [k, v] : t.items()) f[k] = v;
    j["fusion"] = f;
    j["transport"] = {{"p", transport.p},
                      {"epsilon_scale", transport.epsilon_scale},
                      {"max_iters", transport.max_iters},
                      {"tol", transport.tol},
                      {"sample_size", transport.sample_size}};
  } else if (command == "eval" || command == "export-embeddings") {
    path("data", data);
    path("checkpoint", checkpoint);
    path("out", out);
  } else if (command == "gen-sbm") {
    path("out", out);
    j["seed"] = seed;
    j["sbm"] = {{"block_sizes", sbm.block_sizes},       {"p_in", sbm.p_in},
                {"p_out", sbm.p_out},                   {"feature_dim", sbm.feature_dim},
                {"class_signal", sbm.class_signal},     {"train_fraction", sbm.train_fraction},
                {"val_fraction", sbm.val_fraction}};
  } else {
    path("data", data);
  }
  return j;
}

// ---- commands ---------------------------------------------------------------

int cmd_train(const RunConfig& cfg) {
  require(cfg.out, "--out");
  const auto bundle = load_bundle(cfg.data);
  prepare_out(cfg);
  auto model = make_model(cfg.model, bundle.feature_dim, bundle.num_classes);
  const auto ctx = GraphContext::build(bundle, model->required_hops(), cfg.model.max_neighbors);
  const auto result = train_model(*model, ctx, bundle, cfg.train);

  save_checkpoint(*model, cfg.out / "checkpoint", result.best_epoch);
  write_history(cfg.out / "history.jsonl", result.history);
  write_json(cfg.out / "metrics.json", model_metrics(*model, ctx, bundle, result.best_epoch));
  write_json(cfg.out / "training.json", {{"best_epoch", result.best_epoch},
                                         {"best_val_acc", result.best_val_acc},
                                         {"epochs_run", result.history.size()},
                                         {"early_stopped", result.early_stopped}});
  print_model_tables(*model, ctx, bundle);
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const auto bundle = load_bundle(cfg.data);
  const auto loaded = load_model(cfg.checkpoint, "--checkpoint", bundle);
  const Model& model = *loaded.model;
  const auto ctx = GraphContext::build(bundle, model.required_hops(), model.config().max_neighbors);
  const auto metrics = model_metrics(model, ctx, bundle, loaded.epoch);
  print_model_tables(model, ctx, bundle);
  std::cout << metrics.dump(2) << "\n";
  if (!cfg.out.empty()) {
    prepare_out(cfg);
    write_json(cfg.out / "metrics.json", metrics);
  }
  return 0;
}

int cmd_export(const RunConfig& cfg) {
  require(cfg.out, "--out");
  const auto bundle = load_bundle(cfg.data);
  const auto loaded = load_model(cfg.checkpoint, "--checkpoint", bundle);
  const Model& model = *loaded.model;
  prepare_out(cfg);
  const auto ctx = GraphContext::build(bundle, model.required_hops(), model.config().max_neighbors);
  export_embeddings(model.embed(ctx, {}), bundle.labels, cfg.out, std::string(model_kind_name(model.kind())));
  spdlog::info("wrote {} x {} embeddings to {}", bundle.num_nodes, model.embedding_dim(), cfg.out.string());
  return 0;
}

int cmd_gen_sbm(const RunConfig& cfg) {
  require(cfg.out, "--out");
  const auto bundle = generate_sbm(cfg.sbm);
  write_bundle(bundle, cfg.out);
  write_json(cfg.out / "effective_config.json", cfg.to_json());
  spdlog::info("sbm bundle: {} nodes, {} edges, {} classes", bundle.num_nodes, bundle.num_undirected_edges(),
               bundle.num_classes);
  return 0;
}

int cmd_validate_bundle(const RunConfig& cfg) {
  const auto bundle = load_bundle(cfg.data);
  ordered_json j;
  j["num_nodes"] = bundle.num_nodes;
  j["num_edges"] = bundle.num_undirected_edges();
  j["num_classes"] = bundle.num_classes;
  j["feature_dim"] = bundle.feature_dim;
  for (auto [split, name] : kSplits) j[std::string(name) + "_nodes"] = bundle.nodes_in(split).size();
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_fuse(const RunConfig& cfg) {
  require(cfg.out, "--out");
  const auto bundle = load_bundle(cfg.data);
  auto gnn = load_model(cfg.gnn, "--gnn", bundle);
  auto gat = load_model(cfg.gat, "--gat", bundle);
  const std::size_t classes = bundle.num_classes;

  FusionPolicy policy = FusionPolicy::defaults(classes);
  policy.seed = cfg.seed;
  if (!cfg.fusion.base_gnn_weights.empty()) policy.base_gnn = cfg.fusion.base_gnn_weights;
  if (!cfg.fusion.balance.empty()) policy.balance = cfg.fusion.balance;
  policy.validate();
  FusionTrainConfig ftc;
  ftc.train = cfg.fusion.train;
  ftc.lambda = cfg.fusion.wr_loss ? cfg.fusion.lambda : std::vector<double>(classes, 0.0);
  ftc.wr = cfg.transport;
  ftc.train_projections = cfg.fusion.train_projections;
  RunConfig resolved = cfg;
  resolved.fusion.base_gnn_weights = policy.base_gnn;
  resolved.fusion.balance = policy.balance;
  resolved.fusion.lambda = FusionTrainConfig{TrainConfig{}, cfg.fusion.lambda, {}, true}.resolved_lambda(classes);
  prepare_out(resolved);

  const std::size_t hops = std::max(gnn.model->required_hops(), gat.model->required_hops());
  const std::size_t max_neighbors = std::max(gnn.model->config().max_neighbors, gat.model->config().max_neighbors);
  const auto ctx = GraphContext::build(bundle, hops, max_neighbors);
  const auto experts = run_experts(*gnn.model, *gat.model, ctx);

  const auto test_ids = bundle.nodes_in(Split::kTest);
  std::vector<ComparisonRow> rows{
      {"gnn", evaluate(experts.p_gnn, bundle, Split::kVal), evaluate(experts.p_gnn, bundle, Split::kTest)},
      {"gat", evaluate(experts.p_gat, bundle, Split::kVal), evaluate(experts.p_gat, bundle, Split::kTest)}};
  std::vector<StrategyEvaluation> candidates;
  std::vector<FusionPolicy> policies;
  ordered_json strategies = ordered_json::array();
  ordered_json wr_info;
  for (auto strategy : cfg.fusion.strategies) {
    FusionPolicy p = policy;
    p.strategy = strategy;
    FusedPrediction fused;
    switch (strategy) {
      case FusionStrategy::kFixed: fused = fixed_fuse(experts.p_gnn, experts.p_gat, p); break;
      case FusionStrategy::kAdaptive: fused = adaptive_fuse(experts.p_gnn, experts.p_gat); break;
      case FusionStrategy::kWr: {
        auto trained = train_wr_heads(*gnn.model, *gat.model, ctx, bundle, experts, p, ftc);
        p = std::move(trained.policy);
        fused = wr_fuse(*gnn.model, *gat.model, ctx, experts, p);
        write_history(cfg.out / "wr_history.jsonl", trained.training.history);
        wr_info = {{"best_epoch", trained.training.best_epoch},
                   {"lambda", ftc.resolved_lambda(classes)},
                   {"class_wr_before", trained.wr_before},
                   {"class_wr_after", trained.wr_after}};
        break;
      }
    }
    ComparisonRow row{std::string(strategy_name(strategy)), evaluate(fused.probs, bundle, Split::kVal),
                      evaluate(fused.probs, bundle, Split::kTest)};
    ordered_json s;
    s["strategy"] = row.name;
    s["val"] = row.val.to_json();
    s["test"] = row.test.to_json();
    std::vector<double> gat_weight;
    for (std::size_t c = 0; c < classes; ++c) gat_weight.push_back(fused.mean_gat_weight(c, test_ids));
    s["mean_gat_weight_test"] = gat_weight;
    strategies.push_back(s);
    candidates.push_back({strategy, row.val});
    policies.push_back(std::move(p));
    rows.push_back(std::move(row));
  }
  const std::size_t chosen = select_strategy(candidates);
  save_policy(policies[chosen], cfg.out / "policy");

  ordered_json metrics;
  metrics["selected"] = strategy_name(candidates[chosen].strategy);
  metrics["experts"] = {{"gnn", {{"model", model_kind_name(gnn.model->kind())}, {"val", rows[0].val.to_json()},
                                 {"test", rows[0].test.to_json()}}},
                        {"gat", {{"model", model_kind_name(gat.model->kind())}, {"val", rows[1].val.to_json()},
                                 {"test", rows[1].test.to_json()}}}};
  metrics["strategies"] = strategies;
  if (!wr_info.is_null()) metrics["wr"] = wr_info;
  write_json(cfg.out / "metrics.json", metrics);
  const std::string table = comparison_table(rows, classes);
  write_file(cfg.out / "comparison.txt", table);
  std::cout << table << "selected: " << strategy_name(candidates[chosen].strategy) << "\n";
  return 0;
}

// ---- entry point --------------------------------------------------------------

int run(int argc, const char* const* argv) {
  auto logger = spdlog::get("grafuse");
  if (!logger) logger = spdlog::stderr_color_mt("grafuse");
  spdlog::set_default_logger(logger);

  CLI::App app{"grafuse: graph expert models with transport-guided fusion"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  FlagSet flags;
  std::string config_path;
  const auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; flags override its values");
  };

  auto* train = app.add_subcommand("train", "train one expert model");
  add_config(train);
  add_common(train, flags);
  flags.add(train, "--model", "/model/kind", FlagKind::kString, "gcn, gnn or mhgat");
  flags.add(train, "--hidden", "/model/hidden", FlagKind::kUint, "hidden width (per head for mhgat); 0 = default");
  flags.add(train, "--heads", "/model/heads", FlagKind::kUint, "attention heads");
  flags.add(train, "--hops", "/model/hops", FlagKind::kUint, "hop levels for mhgat");
  flags.add(train, "--max-neighbors", "/model/max_neighbors", FlagKind::kUint, "per-node cap for hop levels >= 2");
  flags.add(train, "--dropout", "/model/dropout", FlagKind::kDouble, "dropout rate; negative = default");
  add_train_flags(train, flags, "/train");

  auto* fuse = app.add_subcommand("fuse", "fuse two trained experts");
  add_config(fuse);
  add_common(fuse, flags);
  flags.add(fuse, "--gnn", "/gnn", FlagKind::kString, "GNN expert run or checkpoint directory");
  flags.add(fuse, "--gat", "/gat", FlagKind::kString, "attention expert run or checkpoint directory");
  flags.add(fuse, "--strategies", "/fusion/strategies", FlagKind::kStringList, "comma list of fixed, adaptive, wr");
  bool with_wr = false;
  fuse->add_flag("--wr", with_wr, "add the wr strategy (trains projection heads)");
  flags.add(fuse, "--base-weights", "/fusion/base_gnn_weights", FlagKind::kDoubleList, "per-class GNN weights");
  flags.add(fuse, "--balance", "/fusion/balance", FlagKind::kDoubleList, "per-class balance factors");
  flags.add(fuse, "--lambda", "/fusion/lambda", FlagKind::kDoubleList, "per-class WR loss weights");
  flags.add(fuse, "--no-projection", "/fusion/train_projections", FlagKind::kSetFalse,
            "keep identity projections (ablation)");
  flags.add(fuse, "--no-wr-loss", "/fusion/wr_loss", FlagKind::kSetFalse, "drop the WR loss term (ablation)");
  add_train_flags(fuse, flags, "/fusion");
  flags.add(fuse, "--wr-p", "/transport/p", FlagKind::kDouble, "order p of the WR distance");
  flags.add(fuse, "--epsilon-scale", "/transport/epsilon_scale", FlagKind::kDouble, "Sinkhorn epsilon / median cost");
  flags.add(fuse, "--sinkhorn-iters", "/transport/max_iters", FlagKind::kUint, "Sinkhorn iteration cap");
  flags.add(fuse, "--sample-size", "/transport/sample_size", FlagKind::kUint, "nodes per class in the WR loss");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on every split");
  add_config(eval);
  flags.add(eval, "--checkpoint", "/checkpoint", FlagKind::kString, "train run or checkpoint directory");
  flags.add(eval, "--data", "/data", FlagKind::kString, "graph bundle directory");
  flags.add(eval, "--out", "/out", FlagKind::kString, "optional output directory for metrics.json");

  auto* exp = app.add_subcommand("export-embeddings", "write node embeddings of a checkpoint");
  add_config(exp);
  flags.add(exp, "--checkpoint", "/checkpoint", FlagKind::kString, "train run or checkpoint directory");
  flags.add(exp, "--data", "/data", FlagKind::kString, "graph bundle directory");
  flags.add(exp, "--out", "/out", FlagKind::kString, "output directory");

  auto* gen = app.add_subcommand("gen-sbm", "write a stochastic block model bundle");
  add_config(gen);
  flags.add(gen, "--out", "/out", FlagKind::kString, "bundle directory");
  flags.add(gen, "--seed", "/seed", FlagKind::kUint, "generator seed");
  flags.add(gen, "--blocks", "/sbm/block_sizes", FlagKind::kUintList, "comma list of block sizes");
  flags.add(gen, "--p-in", "/sbm/p_in", FlagKind::kDoubleList, "within-block edge probability (one or per block)");
  flags.add(gen, "--p-out", "/sbm/p_out", FlagKind::kDouble, "between-block edge probability");
  flags.add(gen, "--feature-dim", "/sbm/feature_dim", FlagKind::kUint, "feature dimension");
  flags.add(gen, "--signal", "/sbm/class_signal", FlagKind::kDoubleList, "class mean norm (one or per block)");
  flags.add(gen, "--train-fraction", "/sbm/train_fraction", FlagKind::kDouble, "train share per class");
  flags.add(gen, "--val-fraction", "/sbm/val_fraction", FlagKind::kDouble, "validation share per class");

  auto* val = app.add_subcommand("validate-bundle", "check a bundle and print its summary");
  flags.add(val, "--data", "/data", FlagKind::kString, "graph bundle directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    json doc = load_config_file(config_path);
    if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
    flags.apply(doc);
    const std::string command = app.get_subcommands().front()->get_name();
    if (with_wr) {
      auto& st = doc["fusion"]["strategies"];
      if (st.is_null()) st = json::array({"fixed", "adaptive"});
      st.push_back("wr");
    }
    const RunConfig cfg = parse_run_config(doc, command);
    if (command == "train") return cmd_train(cfg);
    if (command == "fuse") return cmd_fuse(cfg);
    if (command == "eval") return cmd_eval(cfg);
    if (command == "export-embeddings") return cmd_export(cfg);
    if (command == "gen-sbm") return cmd_gen_sbm(cfg);
    return cmd_validate_bundle(cfg);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    spdlog::error("data error: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return 4;
  }
}

}  // namespace grafuse::cli
