#include "grafuse/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "grafuse/error.hpp"
#include "grafuse/rng.hpp"

namespace grafuse {

DiscreteCloud DiscreteCloud::uniform(Tensor points) {
  const std::size_t m = points.rows();
  if (m == 0) throw ContractError("empty point cloud");
  return {std::move(points), std::vector<double>(m, 1.0 / static_cast<double>(m))};
}

void DiscreteCloud::validate() const {
  if (weights.size() != size()) throw DimensionError("cloud has " + std::to_string(size()) + " points but " +
                                                     std::to_string(weights.size()) + " weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DataError("cloud weight is negative or NaN");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DataError("cloud weights sum to " + std::to_string(total));
}

std::vector<double> TransportPlan::row_sums() const {
  std::vector<double> out(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i] += at(i, j);
  return out;
}

std::vector<double> TransportPlan::col_sums() const {
  std::vector<double> out(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j] += at(i, j);
  return out;
}

namespace {

double pow_norm(double squared, double p) {
  if (p == 2.0) return squared;
  return std::pow(std::sqrt(squared), p);
}

double root(double cost, double p) {
  cost = std::max(cost, 0.0);
  return p == 2.0 ? std::sqrt(cost) : std::pow(cost, 1.0 / p);
}

void check_p(double p) {
  if (!(p >= 1.0)) throw ConfigError("transport exponent p must be >= 1");
}

double plan_cost(const std::vector<double>& plan, const std::vector<double>& cost) {
  double total = 0.0;
  for (std::size_t k = 0; k < plan.size(); ++k) total += plan[k] * cost[k];
  return total;
}

bool is_uniform(const DiscreteCloud& c) {
  const double w = 1.0 / static_cast<double>(c.size());
  return std::all_of(c.weights.begin(), c.weights.end(), [w](double x) { return std::abs(x - w) < 1e-15; });
}

void check_exact_size(const DiscreteCloud& a, const DiscreteCloud& b) {
  if (a.size() * b.size() > kExactWrMaxCells) {
    throw ContractError("exact_wr limited to m*n <= " + std::to_string(kExactWrMaxCells) + " (got " +
                        std::to_string(a.size()) + "x" + std::to_string(b.size()) + "); use sinkhorn_wr");
  }
}

WrResult exact_by_matching(const DiscreteCloud& a, const DiscreteCloud& b, double p) {
  const std::size_t m = a.size();
  const auto c = cost_matrix(a, b, p);
  std::vector<std::size_t> perm(m), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) total += c[i * m + perm[i]];
    if (total < best_cost) {
      best_cost = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  WrResult r;
  r.plan.rows = r.plan.cols = m;
  r.plan.coupling.assign(m * m, 0.0);
  const double w = 1.0 / static_cast<double>(m);
  std::vector<double> terms(m);
  for (std::size_t i = 0; i < m; ++i) {
    r.plan.coupling[i * m + best[i]] = w;
    terms[i] = c[i * m + best[i]];
  }
  // Summing the matched costs in sorted order makes W(a,b) and W(b,a) bit-identical.
  std::sort(terms.begin(), terms.end());
  r.plan.cost = std::accumulate(terms.begin(), terms.end(), 0.0) * w;
  r.distance = root(r.plan.cost, p);
  return r;
}

}  // namespace

std::vector<double> cost_matrix(const DiscreteCloud& a, const DiscreteCloud& b, double p) {
  check_p(p);
  if (a.dim() != b.dim()) {
    throw DimensionError("cost_matrix: point dims " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  const std::size_t m = a.size(), n = b.size(), d = a.dim();
  const auto x = a.points.values();
  const auto y = b.points.values();
  std::vector<double> c(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = x[i * d + k] - y[j * d + k];
        s += t * t;
      }
      c[i * n + j] = pow_norm(s, p);
    }
  return c;
}

WrResult exact_wr(const DiscreteCloud& a, const DiscreteCloud& b, double p) {
  a.validate();
  b.validate();
  check_exact_size(a, b);
  if (a.size() == b.size() && is_uniform(a) && is_uniform(b)) return exact_by_matching(a, b, p);
  return exact_wr_flow(a, b, p);
}

// Successive shortest paths with Bellman-Ford on the residual network
// source -> i (cap a_i) -> j (cap inf, cost C_ij) -> sink (cap b_j).
WrResult exact_wr_flow(const DiscreteCloud& a, const DiscreteCloud& b, double p) {
  a.validate();
  b.validate();
  check_exact_size(a, b);
  const std::size_t m = a.size(), n = b.size();
  const auto c = cost_matrix(a, b, p);
  std::vector<double> flow(m * n, 0.0);
  std::vector<double> supply = a.weights, demand = b.weights;
  constexpr double kEps = 1e-15;

  // Nodes: 0..m-1 sources, m..m+n-1 targets. Residual arcs: forward i->j
  // always; backward j->i where flow > 0.
  const std::size_t nodes = m + n;
  for (std::size_t round = 0; round < 4 * (m + n) * (m + n) + 16; ++round) {
    double left = 0.0;
    for (double s : supply) left += s;
    if (left <= kEps) break;
    std::vector<double> dist(nodes, std::numeric_limits<double>::infinity());
    std::vector<std::ptrdiff_t> prev(nodes, -1);
    for (std::size_t i = 0; i < m; ++i)
      if (supply[i] > kEps) dist[i] = 0.0;
    for (std::size_t pass = 0; pass < nodes; ++pass) {
      bool changed = false;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double w = c[i * n + j];
          if (dist[i] + w < dist[m + j] - 1e-15) {
            dist[m + j] = dist[i] + w;
            prev[m + j] = static_cast<std::ptrdiff_t>(i);
            changed = true;
          }
          if (flow[i * n + j] > kEps && dist[m + j] - w < dist[i] - 1e-15) {
            dist[i] = dist[m + j] - w;
            prev[i] = static_cast<std::ptrdiff_t>(m + j);
            changed = true;
          }
        }
      if (!changed) break;
    }
    std::size_t sink_side = nodes;
    for (std::size_t j = 0; j < n; ++j)
      if (demand[j] > kEps && std::isfinite(dist[m + j]) && (sink_side == nodes || dist[m + j] < dist[sink_side]))
        sink_side = m + j;
    if (sink_side == nodes) break;

    // Walk back to a source with spare supply and find the bottleneck.
    double push = demand[sink_side - m];
    std::size_t v = sink_side;
    while (prev[v] >= 0) {
      const auto u = static_cast<std::size_t>(prev[v]);
      if (v < m) push = std::min(push, flow[v * n + (u - m)]);  // backward arc j->i
      v = u;
    }
    push = std::min(push, supply[v]);
    v = sink_side;
    while (prev[v] >= 0) {
      const auto u = static_cast<std::size_t>(prev[v]);
      if (v >= m) flow[u * n + (v - m)] += push;
      else flow[v * n + (u - m)] -= push;
      v = u;
    }
    supply[v] -= push;
    demand[sink_side - m] -= push;
  }
  WrResult r;
  r.plan.rows = m;
  r.plan.cols = n;
  for (auto& f : flow) f = std::max(f, 0.0);
  r.plan.coupling = std::move(flow);
  r.plan.cost = plan_cost(r.plan.coupling, c);
  r.distance = root(r.plan.cost, p);
  return r;
}

WrResult sinkhorn_wr(const DiscreteCloud& a, const DiscreteCloud& b, double p, const SinkhornOptions& options) {
  a.validate();
  b.validate();
  const std::size_t m = a.size(), n = b.size();
  const auto c = cost_matrix(a, b, p);
  for (double v : c)
    if (!std::isfinite(v)) throw DataError("sinkhorn_wr: non-finite cost entry");

  double eps = options.epsilon;
  if (eps <= 0.0) {
    std::vector<double> sorted = c;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
    double scale = sorted[sorted.size() / 2];
    if (scale <= 0.0) scale = *std::max_element(c.begin(), c.end());
    eps = scale > 0.0 ? options.epsilon_scale * scale : 1.0;
  }

  std::vector<double> log_a(m), log_b(n);
  for (std::size_t i = 0; i < m; ++i) log_a[i] = std::log(a.weights[i]);
  for (std::size_t j = 0; j < n; ++j) log_b[j] = std::log(b.weights[j]);
  std::vector<double> f(m, 0.0), g(n, 0.0), buf(std::max(m, n));

  const auto lse = [](std::span<const double> v) {
    const double hi = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(hi)) return hi;
    double s = 0.0;
    for (double x : v) s += std::exp(x - hi);
    return hi + std::log(s);
  };

  WrResult r;
  r.plan.rows = m;
  r.plan.cols = n;
  r.plan.coupling.assign(m * n, 0.0);
  r.plan.converged = false;
  const auto build_plan = [&] {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) r.plan.coupling[i * n + j] = std::exp((f[i] + g[j] - c[i * n + j]) / eps);
  };

  std::size_t it = 0;
  while (it < options.max_iters) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) buf[j] = (g[j] - c[i * n + j]) / eps;
      f[i] = eps * (log_a[i] - lse(std::span<const double>(buf.data(), n)));
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) buf[i] = (f[i] - c[i * n + j]) / eps;
      g[j] = eps * (log_b[j] - lse(std::span<const double>(buf.data(), m)));
    }
    ++it;
    build_plan();
    if (options.record_trace) r.plan.cost_trace.push_back(plan_cost(r.plan.coupling, c));
    // Columns are exact after the g-update; rows carry the residual error.
    double err = 0.0;
    const auto rows = r.plan.row_sums();
    for (std::size_t i = 0; i < m; ++i) err += std::abs(rows[i] - a.weights[i]);
    if (err <= options.tol) {
      r.plan.converged = true;
      break;
    }
  }
  if (it == 0) build_plan();
  r.plan.iterations = it;
  r.plan.cost = plan_cost(r.plan.coupling, c);
  r.distance = root(r.plan.cost, p);
  if (!std::isfinite(r.distance)) throw NumericError("sinkhorn_wr produced a non-finite distance");
  return r;
}

Tensor transport_cost(const Tensor& x, const Tensor& y, std::vector<double> plan, double p) {
  check_p(p);
  const std::size_t m = x.rows(), n = y.rows(), d = x.cols();
  if (y.cols() != d) throw DimensionError("transport_cost: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  if (plan.size() != m * n) throw DimensionError("transport_cost: plan size " + std::to_string(plan.size()));
  const auto xv = x.values();
  const auto yv = y.values();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = xv[i * d + k] - yv[j * d + k];
        s += t * t;
      }
      total += plan[i * n + j] * pow_norm(s, p);
    }
  const double value = root(total, p);
  return Tensor::make_op(
      "transport_cost", {}, {value}, {x, y}, [plan = std::move(plan), total, m, n, d, p](const BackwardContext& ctx) {
        // Below this the root is non-differentiable; treat the clouds as aligned.
        if (total < 1e-24) return;
        const double outer = ctx.grad[0] * root(total, p) / (p * total);
        const Tensor& tx = ctx.inputs[0];
        const Tensor& ty = ctx.inputs[1];
        const auto xv = tx.values();
        const auto yv = ty.values();
        std::vector<double> gx(m * d, 0.0), gy(n * d, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double w = plan[i * n + j];
            if (w == 0.0) continue;
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
              const double t = xv[i * d + k] - yv[j * d + k];
              s += t * t;
            }
            if (s == 0.0) continue;
            // d/dx ||x-y||^p = p ||x-y||^(p-2) (x-y)
            const double coef = outer * w * p * (p == 2.0 ? 1.0 : std::pow(std::sqrt(s), p - 2.0));
            for (std::size_t k = 0; k < d; ++k) {
              const double t = coef * (xv[i * d + k] - yv[j * d + k]);
              gx[i * d + k] += t;
              gy[j * d + k] -= t;
            }
          }
        if (tx.requires_grad()) tx.accumulate_grad(gx);
        if (ty.requires_grad()) ty.accumulate_grad(gy);
      });
}

std::vector<std::uint32_t> sample_class_nodes(std::span<const std::uint16_t> labels, std::span<const Split> split,
                                              std::uint16_t class_id, std::size_t sample_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == class_id && split[i] == Split::kTrain) ids.push_back(static_cast<std::uint32_t>(i));
  if (ids.size() > sample_size) {
    KeyedRng rng(seed, epoch, 0x7700 + class_id);
    for (std::size_t k = 0; k < sample_size; ++k) {
      const std::size_t pick = k + rng.next_below(ids.size() - k);
      std::swap(ids[k], ids[pick]);
    }
    ids.resize(sample_size);
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

Tensor class_wr_loss(const Tensor& gnn_embed, const Tensor& gat_embed, std::span<const std::uint16_t> labels,
                     std::span<const Split> split, std::uint16_t class_id, const WrLossConfig& config,
                     std::uint64_t epoch) {
  if (gnn_embed.rows() != gat_embed.rows() || gnn_embed.rows() != labels.size() || split.size() != labels.size()) {
    throw DimensionError("class_wr_loss: embeddings " + shape_string(gnn_embed.shape()) + " / " +
                         shape_string(gat_embed.shape()) + " for " + std::to_string(labels.size()) + " labels");
  }
  const auto ids = sample_class_nodes(labels, split, class_id, config.sample_size, config.seed, epoch);
  if (ids.size() < 2) {
    spdlog::warn("class {} has {} train node(s); WR loss term is zero", class_id, ids.size());
    return Tensor::scalar(0.0);
  }
  const Tensor x = gather_rows(gnn_embed, ids);
  const Tensor y = gather_rows(gat_embed, ids);
  SinkhornOptions opt;
  opt.epsilon_scale = config.epsilon_scale;
  opt.max_iters = config.max_iters;
  opt.tol = config.tol;
  auto solved = sinkhorn_wr(DiscreteCloud::uniform(x.detach()), DiscreteCloud::uniform(y.detach()), config.p, opt);
  return transport_cost(x, y, std::move(solved.plan.coupling), config.p);
}

}  // namespace grafuse
