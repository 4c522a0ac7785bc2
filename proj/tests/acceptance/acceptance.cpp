// Acceptance harness: one PASS / FAIL / WAIVED line per criterion.
//
//   acceptance [--strict] [--only name,name]
//
// GRAFUSE_PUBMED_BUNDLE points at a converted PubMed bundle. Without it the
// PubMed baseline is waived and the class-balance criteria run on a
// PubMed-shaped SBM surrogate (labelled as such in the output).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "grafuse/cli.hpp"
#include "grafuse/error.hpp"
#include "grafuse/fusion.hpp"
#include "grafuse/io.hpp"
#include "support/gradcheck.hpp"

using namespace grafuse;
using grafuse::testing::grad_check;
using grafuse::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

enum class Status { kPass, kFail, kWaived };

struct Verdict {
  Status status = Status::kFail;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pct(double v) { return fmt("%.1f%%", 100.0 * v); }

// ---- gradient integrity ----------------------------------------------------

Tensor positive_leaf(Shape shape, std::uint64_t seed) {
  auto t = random_tensor(shape, seed);
  for (auto& v : t.mutable_values()) v = 0.5 + std::abs(v);
  return t;
}

GraphBundle twelve_nodes(std::uint64_t seed) {
  SbmConfig c;
  c.block_sizes = {4, 4, 4};
  c.p_in = {0.7};
  c.p_out = 0.15;
  c.feature_dim = 5;
  c.class_signal = {2.0};
  c.seed = seed;
  return generate_sbm(c);
}

using OpCheck = std::function<double(std::uint64_t seed)>;

std::vector<std::pair<std::string, OpCheck>> op_checks() {
  std::vector<std::pair<std::string, OpCheck>> ops;
  const auto weighted = [](const Tensor& out, std::uint64_t seed) {
    return sum(mul(out, random_tensor(out.shape(), seed + 999, 1.0, false)));
  };
  const auto unary = [&](std::string name, std::function<Tensor(const Tensor&)> f, bool positive = false) {
    ops.emplace_back(name, [=](std::uint64_t s) {
      Tensor x = positive ? positive_leaf({4, 5}, s) : random_tensor({4, 5}, s);
      return grad_check({x}, [&] { return weighted(f(x), s); }).worst();
    });
  };
  const auto binary = [&](std::string name, std::function<Tensor(const Tensor&, const Tensor&)> f,
                          bool positive_rhs = false, bool scalar_rhs = false) {
    ops.emplace_back(name, [=](std::uint64_t s) {
      Tensor a = random_tensor({3, 4}, s);
      Shape bs = scalar_rhs ? Shape{} : Shape{3, 4};
      Tensor b = positive_rhs ? positive_leaf(bs, s + 1) : random_tensor(bs, s + 1);
      return grad_check({a, b}, [&] { return weighted(f(a, b), s); }).worst();
    });
  };

  ops.emplace_back("matmul", [=](std::uint64_t s) {
    Tensor a = random_tensor({4, 3}, s), b = random_tensor({3, 5}, s + 1);
    return grad_check({a, b}, [&] { return weighted(matmul(a, b), s); }).worst();
  });
  binary("add", [](auto& a, auto& b) { return add(a, b); });
  binary("add(scalar)", [](auto& a, auto& b) { return add(a, b); }, false, true);
  binary("sub", [](auto& a, auto& b) { return sub(a, b); });
  binary("mul", [](auto& a, auto& b) { return mul(a, b); });
  binary("mul(scalar)", [](auto& a, auto& b) { return mul(a, b); }, false, true);
  binary("div", [](auto& a, auto& b) { return div(a, b); }, true);
  binary("div(scalar)", [](auto& a, auto& b) { return div(a, b); }, true, true);
  unary("scale", [](auto& x) { return scale(x, -1.7); });
  ops.emplace_back("add_bias", [=](std::uint64_t s) {
    Tensor x = random_tensor({4, 3}, s), b = random_tensor({3}, s + 1);
    return grad_check({x, b}, [&] { return weighted(add_bias(x, b), s); }).worst();
  });
  unary("relu", [](auto& x) { return relu(x); });
  unary("leaky_relu", [](auto& x) { return leaky_relu(x, 0.2); });
  unary("elu", [](auto& x) { return elu(x); });
  unary("exp", [](auto& x) { return exp(x); });
  unary("log", [](auto& x) { return log(x); }, true);
  ops.emplace_back("dropout", [=](std::uint64_t s) {
    Tensor x = random_tensor({4, 5}, s);
    return grad_check({x}, [&] { return weighted(dropout(x, 0.4, true, {s, 3, 1}), s); }).worst();
  });
  unary("row_softmax", [](auto& x) { return row_softmax(x); });
  ops.emplace_back("row_softmax(mask)", [=](std::uint64_t s) {
    Tensor x = random_tensor({4, 5}, s);
    Mask mask(20, 1);
    KeyedRng rng(s, 0x3a5c);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 1; j < 5; ++j) mask[i * 5 + j] = rng.next_uniform() < 0.6;
    return grad_check({x}, [&] { return weighted(row_softmax(x, mask), s); }).worst();
  });
  unary("log_softmax", [](auto& x) { return log_softmax(x); });
  ops.emplace_back("layer_norm", [=](std::uint64_t s) {
    Tensor x = random_tensor({4, 5}, s), g = random_tensor({5}, s + 1), b = random_tensor({5}, s + 2);
    return grad_check({x, g, b}, [&] { return weighted(layer_norm(x, g, b), s); }).worst();
  });
  unary("sum", [](auto& x) { return sum(x); });
  unary("mean", [](auto& x) { return mean(x); });

  const std::vector<std::uint32_t> ids{0, 2, 3};
  const std::vector<std::uint16_t> labels{1, 0, 4, 2};
  ops.emplace_back("nll_loss", [=](std::uint64_t s) {
    Tensor x = random_tensor({4, 5}, s);
    return grad_check({x}, [&] { return nll_loss(log_softmax(x), ids, labels); }).worst();
  });
  ops.emplace_back("nll_from_probs", [=](std::uint64_t s) {
    Tensor x = random_tensor({4, 5}, s);
    return grad_check({x}, [&] { return nll_from_probs(row_softmax(x), ids, labels); }).worst();
  });
  ops.emplace_back("cross_entropy", [=](std::uint64_t s) {
    Tensor x = random_tensor({4, 5}, s);
    return grad_check({x}, [&] { return cross_entropy(x, ids, labels); }).worst();
  });
  ops.emplace_back("concat_cols", [=](std::uint64_t s) {
    Tensor a = random_tensor({4, 2}, s), b = random_tensor({4, 3}, s + 1);
    return grad_check({a, b}, [&] { return weighted(concat_cols({a, b}), s); }).worst();
  });
  unary("select_column", [](auto& x) { return select_column(x, 3); });
  unary("gather_rows", [](auto& x) {
    const std::vector<std::uint32_t> rows{3, 0, 3};
    return gather_rows(x, rows);
  });
  unary("pick", [](auto& x) { return pick(x, 7); });

  const SparseMatrix adj = normalize_adjacency(twelve_nodes(3).edges, 12);
  ops.emplace_back("spmm", [=](std::uint64_t s) {
    Tensor x = random_tensor({12, 3}, s);
    return grad_check({x}, [&] { return weighted(spmm(adj, x), s); }).worst();
  });
  ops.emplace_back("edge_scores", [=](std::uint64_t s) {
    Tensor r = random_tensor({12, 1}, s), c = random_tensor({12, 1}, s + 1);
    return grad_check({r, c}, [&] { return weighted(edge_scores(adj, r, c), s); }).worst();
  });
  ops.emplace_back("segment_softmax", [=](std::uint64_t s) {
    Tensor e = random_tensor({adj.nnz(), 1}, s);
    return grad_check({e}, [&] { return weighted(segment_softmax(adj, e), s); }).worst();
  });
  ops.emplace_back("edge_aggregate", [=](std::uint64_t s) {
    Tensor w = random_tensor({adj.nnz(), 1}, s), x = random_tensor({12, 3}, s + 1);
    return grad_check({w, x}, [&] { return weighted(edge_aggregate(adj, w, x), s); }).worst();
  });
  ops.emplace_back("transport_cost", [=](std::uint64_t s) {
    Tensor x = random_tensor({4, 3}, s), y = random_tensor({5, 3}, s + 1);
    const auto plan = sinkhorn_wr(DiscreteCloud::uniform(x.detach()), DiscreteCloud::uniform(y.detach())).plan.coupling;
    double worst = 0.0;
    for (double p : {1.5, 2.0, 3.0})
      worst = std::max(worst, grad_check({x, y}, [&] { return transport_cost(x, y, plan, p); }).worst());
    return worst;
  });
  ops.emplace_back("fuse_probabilities", [=](std::uint64_t s) {
    Tensor p = positive_leaf({5, 3}, s), q = positive_leaf({5, 3}, s + 1);
    return grad_check({p, q}, [&] {
             return weighted(fuse_probabilities(p, q, {0.95, 0.95, 0.2}, {0.7, 0.3, 0.5}), s);
           }).worst();
  });
  return ops;
}

Verdict gradient_integrity() {
  const double tol = 1e-4;
  double worst = 0.0;
  std::string worst_name;
  std::vector<std::string> failures;
  const auto ops = op_checks();
  for (const auto& [name, check] : ops)
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const double e = check(seed * 17 + 1);
      if (e > worst) worst = e, worst_name = name;
      if (!(e < tol)) failures.push_back(name + "@" + std::to_string(seed));
    }
  std::size_t model_checks = 0;
  for (auto kind : {ModelKind::kGcn, ModelKind::kResidualGnn, ModelKind::kMultiHopGat})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto g = twelve_nodes(seed);
      ModelConfig c{kind};
      c.seed = seed;
      c.hidden = kind == ModelKind::kGcn ? 4 : kind == ModelKind::kResidualGnn ? 6 : 3;
      auto m = make_model(c, g.feature_dim, g.num_classes);
      const auto ctx = GraphContext::build(g, m->required_hops());
      std::vector<std::uint32_t> ids(g.num_nodes);
      std::iota(ids.begin(), ids.end(), 0u);
      std::vector<Tensor> params;
      for (auto& p : m->parameters()) params.push_back(p.value);
      for (bool train : {false, true}) {
        const double e =
            grad_check(params, [&] { return cross_entropy(m->forward(ctx, {train, 5}), ids, g.labels); }).worst();
        ++model_checks;
        const std::string name = std::string(model_kind_name(kind)) + (train ? "/train" : "/eval");
        if (e > worst) worst = e, worst_name = name;
        if (!(e < tol)) failures.push_back(name + "@" + std::to_string(seed));
      }
    }
  Verdict v;
  v.status = failures.empty() ? Status::kPass : Status::kFail;
  v.detail = std::to_string(ops.size()) + " ops x 10 seeds, " + std::to_string(model_checks) +
             " whole-model checks; worst rel err " + fmt("%.2e", worst) + " (" + worst_name + ")";
  if (!failures.empty()) v.detail += "; failing: " + failures.front() + " and " + std::to_string(failures.size() - 1) + " more";
  return v;
}

// ---- transport oracle --------------------------------------------------------

Verdict ot_oracle() {
  std::size_t misses = 0, axiom_failures = 0;
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    KeyedRng rng(k, 0x07ac1e);
    const std::size_t m = 1 + rng.next_below(6), n = 1 + rng.next_below(6);
    const std::size_t d = 1 + rng.next_below(3);
    const auto a = DiscreteCloud::uniform(random_tensor({m, d}, 2 * k, 1.0, false));
    auto b = DiscreteCloud::uniform(random_tensor({n, d}, 2 * k + 1, 1.0, false));
    for (auto& v : b.points.mutable_values()) v += 0.5;
    SinkhornOptions o;
    o.epsilon_scale = 0.005;
    o.max_iters = 200000;
    o.tol = 1e-9;
    const double exact = exact_wr(a, b).distance;
    const double approx = sinkhorn_wr(a, b, 2.0, o).distance;
    const double rel = std::abs(approx - exact) / exact;
    worst = std::max(worst, rel);
    if (!(rel <= 0.02)) ++misses;
  }
  // Metric axioms on equal-size uniform clouds, where W_2 is a metric.
  for (std::uint64_t k = 0; k < 50; ++k) {
    const std::size_t n = 2 + k % 4;
    std::vector<DiscreteCloud> c;
    for (std::uint64_t j = 0; j < 3; ++j) c.push_back(DiscreteCloud::uniform(random_tensor({n, 2}, 1000 + 3 * k + j, 1.0, false)));
    const double ab = exact_wr(c[0], c[1]).distance, ba = exact_wr(c[1], c[0]).distance;
    const double bc = exact_wr(c[1], c[2]).distance, ac = exact_wr(c[0], c[2]).distance;
    const double aa = exact_wr(c[0], c[0]).distance;
    if (!(aa <= 1e-12 && ab == ba && ab > 0.0 && ac <= ab + bc + 1e-12)) ++axiom_failures;
  }
  Verdict v;
  v.status = misses == 0 && axiom_failures == 0 ? Status::kPass : Status::kFail;
  v.detail = "100 pairs, worst rel err " + fmt("%.3g", worst) + ", " + std::to_string(misses) + " over 2%; " +
             std::to_string(axiom_failures) + "/50 metric-axiom failures";
  return v;
}

// ---- SBM sanity ---------------------------------------------------------------

Verdict sbm_sanity() {
  SbmConfig c;
  c.block_sizes = {100, 100, 100};
  c.p_in = {0.9};
  c.p_out = 0.05;
  c.class_signal = {3.0};
  c.seed = 11;
  const auto g = generate_sbm(c);
  Verdict v{Status::kPass, ""};
  for (auto kind : {ModelKind::kGcn, ModelKind::kResidualGnn, ModelKind::kMultiHopGat}) {
    ModelConfig mc{kind};
    mc.seed = 1;
    auto m = make_model(mc, g.feature_dim, g.num_classes);
    const auto ctx = GraphContext::build(g, m->required_hops(), mc.max_neighbors);
    train_model(*m, ctx, g, TrainConfig{});
    const double acc = evaluate(m->forward(ctx, {}), g, Split::kTest).accuracy;
    if (acc < 0.95) v.status = Status::kFail;
    v.detail += std::string(v.detail.empty() ? "" : ", ") + std::string(model_kind_name(kind)) + " " + pct(acc);
  }
  v.detail += " test accuracy (need >= 95%)";
  return v;
}

// ---- class balance study ------------------------------------------------------

struct Dataset {
  GraphBundle bundle;
  std::string label;
};

/// PubMed's shape at desk scale: class shares 0.21 / 0.39 / 0.40, mean degree
/// about 4.5 with ~80% within-class edges, a small labelled set and weaker
/// features for class 2.
GraphBundle pubmed_surrogate(std::uint64_t seed) {
  SbmConfig c;
  c.block_sizes = {450, 850, 850};
  c.p_in = {0.008, 0.0042, 0.0042};
  c.p_out = 0.0006;
  c.feature_dim = 64;
  c.class_signal = {1.0, 1.0, 0.8};
  c.train_fraction = 0.03;
  c.val_fraction = 0.2;
  c.seed = seed;
  return generate_sbm(c);
}

struct SeedRun {
  MetricsReport gcn, gnn, gat, fixed, adaptive, wr;
  double val_full = 0, val_no_wr = 0, val_no_proj = 0;
  double gat_weight_class2 = 0;
};

SeedRun run_seed(const GraphBundle& g, std::uint64_t seed) {
  SeedRun r;
  std::map<ModelKind, std::unique_ptr<Model>> models;
  std::size_t hops = 0, neighbors = 64;
  for (auto kind : {ModelKind::kGcn, ModelKind::kResidualGnn, ModelKind::kMultiHopGat}) {
    ModelConfig mc{kind};
    mc.seed = seed;
    auto m = make_model(mc, g.feature_dim, g.num_classes);
    const auto ctx = GraphContext::build(g, m->required_hops(), mc.max_neighbors);
    train_model(*m, ctx, g, TrainConfig{});
    const auto report = evaluate(m->forward(ctx, {}), g, Split::kTest);
    (kind == ModelKind::kGcn ? r.gcn : kind == ModelKind::kResidualGnn ? r.gnn : r.gat) = report;
    hops = std::max(hops, m->required_hops());
    neighbors = std::max(neighbors, mc.max_neighbors);
    models[kind] = std::move(m);
  }
  Model& gnn = *models[ModelKind::kResidualGnn];
  Model& gat = *models[ModelKind::kMultiHopGat];
  const auto ctx = GraphContext::build(g, hops, neighbors);
  const auto experts = run_experts(gnn, gat, ctx);
  FusionPolicy policy = FusionPolicy::defaults(g.num_classes);
  policy.seed = seed;
  r.fixed = evaluate(fixed_fuse(experts.p_gnn, experts.p_gat, policy).probs, g, Split::kTest);
  r.adaptive = evaluate(adaptive_fuse(experts.p_gnn, experts.p_gat).probs, g, Split::kTest);

  FusionTrainConfig base;
  base.train = cli::FusionSection{}.train;
  base.wr.seed = seed;
  const auto val_of = [&](const FusionTrainConfig& cfg, FusedPrediction* keep) {
    const auto trained = train_wr_heads(gnn, gat, ctx, g, experts, policy, cfg);
    const auto fused = wr_fuse(gnn, gat, ctx, experts, trained.policy);
    if (keep) *keep = fused;
    return evaluate(fused.probs, g, Split::kVal).accuracy;
  };
  FusedPrediction full;
  r.val_full = val_of(base, &full);
  r.wr = evaluate(full.probs, g, Split::kTest);
  r.gat_weight_class2 = full.mean_gat_weight(2, g.nodes_in(Split::kTest));
  FusionTrainConfig no_wr = base;
  no_wr.lambda.assign(g.num_classes, 0.0);
  r.val_no_wr = val_of(no_wr, nullptr);
  FusionTrainConfig no_proj = base;
  no_proj.train_projections = false;
  r.val_no_proj = val_of(no_proj, nullptr);
  return r;
}

struct Study {
  std::string label;
  std::vector<SeedRun> runs;

  template <typename F>
  double mean(F f) const {
    double s = 0.0;
    for (const auto& r : runs) s += f(r);
    return s / static_cast<double>(runs.size());
  }
};

double class2(const MetricsReport& m) { return m.per_class.at(2).accuracy; }
double cv_or_inf(const MetricsReport& m) { return m.cv.value_or(INFINITY); }

Study run_study(const std::optional<GraphBundle>& pubmed) {
  Study s;
  s.label = pubmed ? "PubMed bundle" : "surrogate SBM";
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const GraphBundle g = pubmed ? *pubmed : pubmed_surrogate(seed);
    if (g.num_classes < 3) throw DataError("class-balance study needs at least three classes");
    s.runs.push_back(run_seed(g, seed));
  }
  return s;
}

Verdict class2_improvement(const Study& s) {
  const double gat = s.mean([](auto& r) { return class2(r.gat); });
  const double gcn = s.mean([](auto& r) { return class2(r.gcn); });
  std::string per_seed;
  for (const auto& r : s.runs) per_seed += fmt(" %+.1f", 100.0 * (class2(r.gat) - class2(r.gcn)));
  return {gat - gcn >= 0.02 ? Status::kPass : Status::kFail,
          "[" + s.label + ", mean of 5 seeds] mhgat class-2 " + pct(gat) + " vs gcn " + pct(gcn) + " (need +2.0 pts; per seed" +
              per_seed + ")"};
}

Verdict fusion_balance(const Study& s) {
  const double cv_wr = s.mean([](auto& r) { return cv_or_inf(r.wr); });
  const double cv_gcn = s.mean([](auto& r) { return cv_or_inf(r.gcn); });
  const double wr2 = s.mean([](auto& r) { return class2(r.wr); });
  const double fixed2 = s.mean([](auto& r) { return class2(r.fixed); });
  const double adaptive2 = s.mean([](auto& r) { return class2(r.adaptive); });
  const double gat_w = s.mean([](auto& r) { return r.gat_weight_class2; });
  const bool ok = cv_wr < cv_gcn && wr2 >= fixed2 && wr2 >= adaptive2;
  return {ok ? Status::kPass : Status::kFail,
          "[" + s.label + ", mean of 5 seeds] CV wr " + fmt("%.4f", cv_wr) + " vs gcn " + fmt("%.4f", cv_gcn) +
              "; class-2 wr " + pct(wr2) + " vs fixed " + pct(fixed2) + " / adaptive " + pct(adaptive2) +
              "; class-2 GAT weight " + fmt("%.2f", gat_w)};
}

Verdict ablation(const Study& s) {
  std::size_t ordered = 0;
  std::string per_seed;
  for (const auto& r : s.runs) {
    const bool ok = r.val_full >= r.val_no_wr && r.val_no_wr >= r.val_no_proj;
    ordered += ok;
    per_seed += " " + fmt("%.3f", r.val_full) + ">=" + fmt("%.3f", r.val_no_wr) + ">=" + fmt("%.3f", r.val_no_proj) +
                (ok ? "" : "(x)");
  }
  return {ordered >= 3 ? Status::kPass : Status::kFail,
          "[" + s.label + "] full >= no-WR >= no-projection (val acc) in " + std::to_string(ordered) +
              "/5 seeds (need 3):" + per_seed};
}

Verdict pubmed_baseline(const std::optional<GraphBundle>& pubmed) {
  if (!pubmed) return {Status::kWaived, "GRAFUSE_PUBMED_BUNDLE not set; converted PubMed bundle unavailable, SBM sanity governs"};
  ModelConfig mc{ModelKind::kGcn};
  mc.seed = 42;
  auto m = make_model(mc, pubmed->feature_dim, pubmed->num_classes);
  const auto ctx = GraphContext::build(*pubmed);
  const auto start = std::chrono::steady_clock::now();
  train_model(*m, ctx, *pubmed, TrainConfig{});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double acc = evaluate(m->forward(ctx, {}), *pubmed, Split::kTest).accuracy;
  const bool ok = acc >= 0.778 && acc <= 0.818 && secs < 300.0;
  return {ok ? Status::kPass : Status::kFail,
          "gcn test accuracy " + pct(acc) + " (need 77.8%..81.8%), " + fmt("%.0f", secs) + " s"};
}

// ---- determinism ------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return files;
}

// Runs a subcommand with its stdout report sent to /dev/null.
int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "grafuse");
  args.insert(args.begin() + 1, {"--log-level", "warn"});
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::fflush(stdout);
  const int saved = dup(STDOUT_FILENO);
  const int null = open("/dev/null", O_WRONLY);
  dup2(null, STDOUT_FILENO);
  close(null);
  const int code = cli::run(static_cast<int>(argv.size()), argv.data());
  std::fflush(stdout);
  dup2(saved, STDOUT_FILENO);
  close(saved);
  return code;
}

Verdict determinism() {
  const auto root = fs::temp_directory_path() / "grafuse_acceptance_determinism";
  fs::remove_all(root);
  const auto data = (root / "sbm").string();
  if (run_cli({"gen-sbm", "--out", data, "--blocks", "60,60,60", "--p-in", "0.2", "--p-out", "0.03", "--signal", "1.5",
               "--seed", "7"}) != 0)
    return {Status::kFail, "gen-sbm failed"};
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
      {"gcn", {"train", "--model", "gcn", "--data", data, "--seed", "3"}},
      {"gnn", {"train", "--model", "gnn", "--data", data, "--seed", "3"}},
      {"gat", {"train", "--model", "mhgat", "--data", data, "--seed", "3"}},
      {"fuse",
       {"fuse", "--gnn", (root / "gnn").string(), "--gat", (root / "gat").string(), "--data", data, "--wr", "--seed",
        "3", "--epochs", "40", "--patience", "15"}},
      {"eval", {"eval", "--checkpoint", (root / "gat").string(), "--data", data}},
      {"emb", {"export-embeddings", "--checkpoint", (root / "gnn").string(), "--data", data}},
  };
  std::size_t files = 0;
  for (const auto& [name, args] : commands) {
    const auto out = root / name;
    auto first = args;
    first.insert(first.end(), {"--out", out.string()});
    if (run_cli(first) != 0) return {Status::kFail, name + " failed"};
    const auto before = snapshot(out);
    const auto config = root / (name + ".json");
    fs::copy_file(out / "effective_config.json", config);
    fs::remove_all(out);
    if (run_cli({args.front(), "--config", config.string()}) != 0) return {Status::kFail, name + " rerun failed"};
    if (snapshot(out) != before) return {Status::kFail, name + ": rerun from effective_config.json differs"};
    files += before.size();
  }
  return {Status::kPass, "train x3, fuse --wr, eval, export-embeddings rerun from effective_config.json: " +
                             std::to_string(files) + " files byte-identical"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grafuse acceptance harness"};
  bool strict = false;
  std::vector<std::string> only;
  app.add_flag("--strict", strict, "exit 1 when any criterion fails");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  std::optional<GraphBundle> pubmed;
  if (const char* path = std::getenv("GRAFUSE_PUBMED_BUNDLE"); path && *path) pubmed = read_bundle(path);

  std::optional<Study> study;
  const auto get_study = [&]() -> const Study& {
    if (!study) study = run_study(pubmed);
    return *study;
  };
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient-integrity", gradient_integrity},
      {"ot-oracle", ot_oracle},
      {"sbm-sanity", sbm_sanity},
      {"pubmed-gcn-baseline", [&] { return pubmed_baseline(pubmed); }},
      {"class2-improvement", [&] { return class2_improvement(get_study()); }},
      {"fusion-balance", [&] { return fusion_balance(get_study()); }},
      {"ablation-ordering", [&] { return ablation(get_study()); }},
      {"determinism", determinism},
  };

  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {Status::kFail, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = v.status == Status::kPass ? "PASS" : v.status == Status::kFail ? "FAIL" : "WAIVED";
    failed += v.status == Status::kFail;
    std::printf("%-6s %-20s %s (%.1f s)\n", tag, name.c_str(), v.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return strict && failed > 0 ? 1 : 0;
}
