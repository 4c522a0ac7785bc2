#include "grafuse/fusion.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "grafuse/error.hpp"
#include "grafuse/io.hpp"
#include "grafuse/rng.hpp"

namespace grafuse {

std::string_view strategy_name(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kFixed: return "fixed";
    case FusionStrategy::kAdaptive: return "adaptive";
    case FusionStrategy::kWr: return "wr";
  }
  return "?";
}

FusionStrategy parse_strategy(std::string_view name) {
  if (name == "fixed") return FusionStrategy::kFixed;
  if (name == "adaptive") return FusionStrategy::kAdaptive;
  if (name == "wr") return FusionStrategy::kWr;
  throw ConfigError("unknown fusion strategy '" + std::string(name) + "' (expected fixed, adaptive or wr)");
}

// ---- projections and policy -----------------------------------------------

ClassProjection ClassProjection::identity(std::size_t dim, std::uint64_t seed, std::size_t class_id) {
  const double bound = std::sqrt(3.0 / static_cast<double>(dim));
  KeyedRng rng(seed, 0xf00d, class_id);
  std::vector<double> w(dim * dim);
  for (auto& x : w) x = bound * (2.0 * rng.next_uniform() - 1.0);
  return {Tensor::from({dim, dim}, std::move(w), true), Tensor::zeros({dim}, true), Tensor::zeros({dim, dim}, true),
          Tensor::zeros({dim}, true)};
}

Tensor ClassProjection::apply(const Tensor& x) const {
  return add(x, add_bias(matmul(relu(add_bias(matmul(x, w1), b1)), w2), b2));
}

FusionPolicy FusionPolicy::defaults(std::size_t num_classes) {
  FusionPolicy p;
  p.base_gnn.assign(num_classes, 0.5);
  if (num_classes == 3) p.base_gnn = {0.95, 0.95, 0.2};
  p.balance.assign(num_classes, 0.7);
  return p;
}

void FusionPolicy::validate() const {
  if (base_gnn.empty()) throw ConfigError("fusion policy has no classes");
  if (balance.size() != base_gnn.size()) {
    throw ConfigError("fusion policy: " + std::to_string(balance.size()) + " balance factors for " +
                      std::to_string(base_gnn.size()) + " classes");
  }
  for (std::size_t c = 0; c < base_gnn.size(); ++c) {
    if (!(base_gnn[c] >= 0.0 && base_gnn[c] <= 1.0)) throw ConfigError("base weight of class " + std::to_string(c) + " outside [0,1]");
    if (!(balance[c] >= 0.0 && balance[c] <= 1.0)) throw ConfigError("balance of class " + std::to_string(c) + " outside [0,1]");
  }
  if (!projections.empty() && projections.size() != base_gnn.size()) {
    throw ConfigError("fusion policy needs one projection per class");
  }
}

std::vector<Parameter> FusionPolicy::projection_parameters() const {
  std::vector<Parameter> out;
  for (std::size_t c = 0; c < projections.size(); ++c) {
    const std::string p = "proj" + std::to_string(c) + ".";
    const auto& pr = projections[c];
    out.push_back({p + "W1", pr.w1, true});
    out.push_back({p + "b1", pr.b1, false});
    out.push_back({p + "W2", pr.w2, true});
    out.push_back({p + "b2", pr.b2, false});
  }
  return out;
}

double FusedPrediction::mean_gat_weight(std::size_t class_id, std::span<const std::uint32_t> ids) const {
  const std::size_t c = probs.cols();
  if (ids.empty()) return 0.0;
  double total = 0.0;
  for (auto i : ids) total += 1.0 - gnn_weight[i * c + class_id];
  return total / static_cast<double>(ids.size());
}

// ---- fusion core ----------------------------------------------------------

void check_stochastic(const Tensor& p, const char* what) {
  const std::size_t n = p.rows(), c = p.cols();
  const auto v = p.values();
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      if (!(v[i * c + k] >= 0.0)) throw DataError(std::string(what) + ": negative probability in row " + std::to_string(i));
      total += v[i * c + k];
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw DataError(std::string(what) + ": row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
  }
}

Tensor fuse_probabilities(const Tensor& p_gnn, const Tensor& p_gat, const std::vector<double>& base_gnn,
                          const std::vector<double>& balance, std::vector<double>* applied) {
  if (p_gnn.shape() != p_gat.shape() || p_gnn.rank() != 2) {
    throw DimensionError("fusion inputs " + shape_string(p_gnn.shape()) + " vs " + shape_string(p_gat.shape()));
  }
  const std::size_t n = p_gnn.rows(), c = p_gnn.cols();
  if (base_gnn.size() != c || balance.size() != c) throw DimensionError("fusion weights do not match class count");
  const auto P = p_gnn.values();
  const auto Q = p_gat.values();

  struct RowState {
    std::size_t ka, kb;
    double a, b, z;
  };
  std::vector<RowState> rows(n);
  std::vector<double> w(n * c), out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    RowState& s = rows[i];
    s.ka = s.kb = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (P[i * c + k] > P[i * c + s.ka]) s.ka = k;
      if (Q[i * c + k] > Q[i * c + s.kb]) s.kb = k;
    }
    s.a = P[i * c + s.ka];
    s.b = Q[i * c + s.kb];
    const double r = s.a + s.b > 0.0 ? s.a / (s.a + s.b) : 0.5;
    s.z = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double wk = balance[k] * base_gnn[k] + (1.0 - balance[k]) * r;
      w[i * c + k] = wk;
      out[i * c + k] = wk * P[i * c + k] + (1.0 - wk) * Q[i * c + k];
      s.z += out[i * c + k];
    }
    if (!(s.z > 0.0)) throw NumericError("fused row " + std::to_string(i) + " has no mass");
    // Already-stochastic rows are left untouched so single-expert weights
    // reproduce that expert exactly.
    if (std::abs(s.z - 1.0) > 1e-12)
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] /= s.z;
  }
  if (applied) *applied = w;
  return Tensor::make_op(
      "fuse", {n, c}, std::move(out), {p_gnn, p_gat},
      [rows = std::move(rows), w = std::move(w), balance, n, c](const BackwardContext& ctx) {
        const Tensor& tp = ctx.inputs[0];
        const Tensor& tq = ctx.inputs[1];
        const auto P = tp.values();
        const auto Q = tq.values();
        std::vector<double> gp(n * c, 0.0), gq(n * c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const RowState& s = rows[i];
          double dot = 0.0;
          for (std::size_t k = 0; k < c; ++k) dot += ctx.grad[i * c + k] * ctx.value[i * c + k];
          double dr = 0.0;
          for (std::size_t k = 0; k < c; ++k) {
            const double h = (ctx.grad[i * c + k] - dot) / s.z;
            const double wk = w[i * c + k];
            gp[i * c + k] += h * wk;
            gq[i * c + k] += h * (1.0 - wk);
            dr += h * (P[i * c + k] - Q[i * c + k]) * (1.0 - balance[k]);
          }
          const double sum = s.a + s.b;
          if (sum > 0.0 && dr != 0.0) {
            gp[i * c + s.ka] += dr * s.b / (sum * sum);
            gq[i * c + s.kb] -= dr * s.a / (sum * sum);
          }
        }
        if (tp.requires_grad()) tp.accumulate_grad(gp);
        if (tq.requires_grad()) tq.accumulate_grad(gq);
      });
}

FusedPrediction fixed_fuse(const Tensor& p_gnn, const Tensor& p_gat, const FusionPolicy& policy) {
  check_stochastic(p_gnn, "gnn probabilities");
  check_stochastic(p_gat, "gat probabilities");
  policy.validate();
  FusedPrediction out;
  out.strategy = FusionStrategy::kFixed;
  const std::vector<double> ones(policy.num_classes(), 1.0);
  out.probs = fuse_probabilities(p_gnn.detach(), p_gat.detach(), policy.base_gnn, ones, &out.gnn_weight);
  return out;
}

FusedPrediction adaptive_fuse(const Tensor& p_gnn, const Tensor& p_gat) {
  check_stochastic(p_gnn, "gnn probabilities");
  check_stochastic(p_gat, "gat probabilities");
  FusedPrediction out;
  out.strategy = FusionStrategy::kAdaptive;
  const std::vector<double> zeros(p_gnn.cols(), 0.0);
  out.probs = fuse_probabilities(p_gnn.detach(), p_gat.detach(), zeros, zeros, &out.gnn_weight);
  return out;
}

// ---- experts and projected heads ------------------------------------------

ExpertOutputs run_experts(const Model& gnn, const Model& gat, const GraphContext& ctx) {
  ExpertOutputs e;
  e.gnn_embed = gnn.embed(ctx, {}).detach();
  e.gat_embed = gat.embed(ctx, {}).detach();
  e.p_gnn = row_softmax(gnn.head(ctx, e.gnn_embed, {})).detach();
  e.p_gat = row_softmax(gat.head(ctx, e.gat_embed, {})).detach();
  return e;
}

namespace {

Tensor probs_from_projected(const Model& expert, const GraphContext& ctx, const std::vector<Tensor>& projected) {
  std::vector<Tensor> columns;
  for (std::size_t c = 0; c < projected.size(); ++c) columns.push_back(select_column(expert.head(ctx, projected[c], {}), c));
  return row_softmax(concat_cols(columns));
}

std::vector<Tensor> project_all(const Tensor& embedding, const std::vector<ClassProjection>& projections) {
  std::vector<Tensor> out;
  for (const auto& p : projections) out.push_back(p.apply(embedding));
  return out;
}

// Expert parameters stay fixed while fusion heads train; dropping their grad
// flag keeps the tape out of them.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<Model*> models) {
    for (Model* m : models)
      for (auto& p : m->parameters()) {
        frozen_.push_back(p.value);
        p.value.set_requires_grad(false);
      }
  }
  ~FreezeGuard() {
    for (auto& t : frozen_) t.set_requires_grad(true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor> frozen_;
};

}  // namespace

Tensor projected_probs(const Model& expert, const GraphContext& ctx, const Tensor& embedding,
                       const std::vector<ClassProjection>& projections) {
  if (projections.empty()) return row_softmax(expert.head(ctx, embedding, {}));
  if (projections.size() != expert.num_classes()) throw ConfigError("one projection per class required");
  return probs_from_projected(expert, ctx, project_all(embedding, projections));
}

FusedPrediction wr_fuse(const Model& gnn, const Model& gat, const GraphContext& ctx, const ExpertOutputs& experts,
                        const FusionPolicy& policy) {
  policy.validate();
  if (policy.projections.empty()) throw ConfigError("wr fusion requires trained projections");
  FusedPrediction out;
  out.strategy = FusionStrategy::kWr;
  const Tensor pg = projected_probs(gnn, ctx, experts.gnn_embed, policy.projections).detach();
  const Tensor pa = projected_probs(gat, ctx, experts.gat_embed, policy.projections).detach();
  out.probs = fuse_probabilities(pg, pa, policy.base_gnn, policy.balance, &out.gnn_weight);
  return out;
}

// ---- training -------------------------------------------------------------

std::vector<double> FusionTrainConfig::resolved_lambda(std::size_t num_classes) const {
  if (!lambda.empty()) {
    if (lambda.size() != num_classes) throw ConfigError("lambda needs one entry per class");
    for (double l : lambda)
      if (!(l >= 0.0)) throw ConfigError("lambda entries must be >= 0");
    return lambda;
  }
  if (num_classes == 3) return {0.01, 0.01, 0.1};
  return std::vector<double>(num_classes, 0.01);
}

double class_wr_distance(const ExpertOutputs& experts, const FusionPolicy& policy, const GraphBundle& bundle,
                         std::uint16_t class_id, const WrLossConfig& config) {
  Tensor x = experts.gnn_embed, y = experts.gat_embed;
  if (!policy.projections.empty()) {
    x = policy.projections[class_id].apply(x.detach()).detach();
    y = policy.projections[class_id].apply(y.detach()).detach();
  }
  return class_wr_loss(x.detach(), y.detach(), bundle.labels, bundle.split, class_id, config, 0).item();
}

FusionTrainResult train_wr_heads(Model& gnn, Model& gat, const GraphContext& ctx, const GraphBundle& bundle,
                                 const ExpertOutputs& experts, FusionPolicy policy, const FusionTrainConfig& config) {
  const std::size_t classes = bundle.num_classes;
  if (gnn.embedding_dim() != gat.embedding_dim()) {
    throw ConfigError("expert embedding widths differ (" + std::to_string(gnn.embedding_dim()) + " vs " +
                      std::to_string(gat.embedding_dim()) + "); WR alignment needs a shared width");
  }
  if (policy.num_classes() != classes) throw DataError("fusion policy class count does not match the bundle");
  const auto lambda = config.resolved_lambda(classes);
  policy.strategy = FusionStrategy::kWr;
  if (policy.projections.empty())
    for (std::size_t c = 0; c < classes; ++c)
      policy.projections.push_back(ClassProjection::identity(gnn.embedding_dim(), policy.seed, c));
  policy.validate();

  FreezeGuard freeze({&gnn, &gat});
  FusionTrainResult result;
  for (std::size_t c = 0; c < classes; ++c)
    result.wr_before.push_back(class_wr_distance(experts, policy, bundle, static_cast<std::uint16_t>(c), config.wr));

  const auto train_ids = bundle.nodes_in(Split::kTrain);
  const auto validate = [&] {
    return evaluate(wr_fuse(gnn, gat, ctx, experts, policy).probs, bundle, Split::kVal).accuracy;
  };
  if (config.train_projections) {
    auto params = policy.projection_parameters();
    const auto loss = [&](std::size_t epoch) {
      const auto pg = project_all(experts.gnn_embed, policy.projections);
      const auto pa = project_all(experts.gat_embed, policy.projections);
      const Tensor fused = fuse_probabilities(probs_from_projected(gnn, ctx, pg), probs_from_projected(gat, ctx, pa),
                                              policy.base_gnn, policy.balance);
      Tensor total = nll_from_probs(fused, train_ids, bundle.labels);
      for (std::size_t c = 0; c < classes; ++c) {
        if (lambda[c] == 0.0) continue;
        const Tensor wr = class_wr_loss(pg[c], pa[c], bundle.labels, bundle.split, static_cast<std::uint16_t>(c),
                                        config.wr, epoch);
        total = add(total, scale(wr, lambda[c]));
      }
      return total;
    };
    result.training = optimize(params, config.train, loss, validate);
  } else {
    result.training.best_val_acc = validate();
  }
  for (std::size_t c = 0; c < classes; ++c)
    result.wr_after.push_back(class_wr_distance(experts, policy, bundle, static_cast<std::uint16_t>(c), config.wr));
  spdlog::info("wr heads: best val acc {:.4f} at epoch {}", result.training.best_val_acc, result.training.best_epoch);
  result.policy = std::move(policy);
  return result;
}

std::size_t select_strategy(const std::vector<StrategyEvaluation>& candidates) {
  if (candidates.empty()) throw ContractError("select_strategy needs at least one candidate");
  const auto cv_of = [](const StrategyEvaluation& e) { return e.val.cv.value_or(INFINITY); };
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const auto& a = candidates[i];
    const auto& b = candidates[best];
    if (a.val.accuracy != b.val.accuracy) {
      if (a.val.accuracy > b.val.accuracy) best = i;
    } else if (cv_of(a) != cv_of(b)) {
      if (cv_of(a) < cv_of(b)) best = i;
    } else if (static_cast<int>(a.strategy) < static_cast<int>(b.strategy)) {
      best = i;
    }
  }
  return best;
}

// ---- persistence ----------------------------------------------------------

void save_policy(const FusionPolicy& policy, const std::filesystem::path& dir) {
  policy.validate();
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["format"] = "grafuse-fusion-1";
  meta["strategy"] = strategy_name(policy.strategy);
  meta["num_classes"] = policy.num_classes();
  meta["base_gnn_weights"] = policy.base_gnn;
  meta["balance"] = policy.balance;
  meta["seed"] = policy.seed;
  meta["projection_dim"] = policy.projections.empty() ? 0 : policy.projections.front().w1.rows();
  write_json(dir / "meta.json", meta);
  write_file(dir / "params.bin", encode_parameters(policy.projection_parameters()));
}

FusionPolicy load_policy(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("fusion policy " + dir.string() + " not found");
  const auto meta = read_json(dir / "meta.json");
  FusionPolicy p;
  std::size_t dim = 0;
  try {
    if (meta.at("format") != "grafuse-fusion-1") throw DataError("fusion policy " + dir.string() + ": unknown format");
    p.strategy = parse_strategy(meta.at("strategy").get<std::string>());
    p.base_gnn = meta.at("base_gnn_weights").get<std::vector<double>>();
    p.balance = meta.at("balance").get<std::vector<double>>();
    p.seed = meta.at("seed").get<std::uint64_t>();
    dim = meta.at("projection_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("fusion policy " + dir.string() + "/meta.json: " + e.what());
  }
  if (dim > 0)
    for (std::size_t c = 0; c < p.base_gnn.size(); ++c) p.projections.push_back(ClassProjection::identity(dim, p.seed, c));
  auto params = p.projection_parameters();
  decode_parameters(read_file(dir / "params.bin"), params, (dir / "params.bin").string());
  p.validate();
  return p;
}

}  // namespace grafuse
