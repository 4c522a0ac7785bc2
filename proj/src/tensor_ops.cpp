#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "grafuse/error.hpp"
#include "grafuse/parallel.hpp"
#include "grafuse/rng.hpp"
#include "grafuse/tensor.hpp"

namespace grafuse {

namespace {

constexpr std::size_t kRowChunk = 64;

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() > 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

// Output shape of a scalar/full broadcast, or throws.
Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a.shape()) +
                       " with " + shape_string(b.shape()));
}

// Reduces a full-shape gradient onto an operand that may have been broadcast.
void accumulate_broadcast(const Tensor& operand, std::vector<double> g) {
  if (!operand.requires_grad()) return;
  if (operand.size() == g.size()) {
    operand.accumulate_grad(g);
    return;
  }
  double total = 0.0;
  for (double v : g) total += v;
  operand.accumulate_grad(std::span<const double>(&total, 1));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  Shape shape = broadcast_shape(a, b, name);
  const std::size_t n = std::max(a.size(), b.size());
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t sa = a.size() == 1 ? 0 : 1;
  const std::size_t sb = b.size() == 1 ? 0 : 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i * sa], bv[i * sb]);
  return Tensor::make_op(name, std::move(shape), std::move(out), {a, b},
                         [n, sa, sb, da, db](const BackwardContext& ctx) {
                           const Tensor& ta = ctx.inputs[0];
                           const Tensor& tb = ctx.inputs[1];
                           const auto x = ta.values();
                           const auto y = tb.values();
                           if (ta.requires_grad()) {
                             std::vector<double> g(n);
                             for (std::size_t i = 0; i < n; ++i)
                               g[i] = ctx.grad[i] * da(x[i * sa], y[i * sb]);
                             accumulate_broadcast(ta, std::move(g));
                           }
                           if (tb.requires_grad()) {
                             std::vector<double> g(n);
                             for (std::size_t i = 0; i < n; ++i)
                               g[i] = ctx.grad[i] * db(x[i * sa], y[i * sb]);
                             accumulate_broadcast(tb, std::move(g));
                           }
                         });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor::make_op(name, x.shape(), std::move(out), {x},
                         [deriv](const BackwardContext& ctx) {
                           const auto in = ctx.inputs[0].values();
                           std::vector<double> g(in.size());
                           for (std::size_t i = 0; i < in.size(); ++i)
                             g[i] = ctx.grad[i] * deriv(in[i], ctx.value[i]);
                           ctx.inputs[0].accumulate_grad(g);
                         });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  parallel_for(m, kRowChunk, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      double* row = out.data() + i * n;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double s = av[i * k + kk];
        if (s == 0.0) continue;
        const double* brow = bv.data() + kk * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
      }
    }
  });
  return Tensor::make_op("matmul", {m, n}, std::move(out), {a, b},
                         [m, k, n](const BackwardContext& ctx) {
                           const Tensor& ta = ctx.inputs[0];
                           const Tensor& tb = ctx.inputs[1];
                           const auto g = ctx.grad;
                           if (ta.requires_grad()) {
                             // ga = g * b^T
                             const auto bv = tb.values();
                             std::vector<double> ga(m * k, 0.0);
                             parallel_for(m, kRowChunk, [&](std::size_t r0, std::size_t r1) {
                               for (std::size_t i = r0; i < r1; ++i)
                                 for (std::size_t kk = 0; kk < k; ++kk) {
                                   double s = 0.0;
                                   for (std::size_t j = 0; j < n; ++j)
                                     s += g[i * n + j] * bv[kk * n + j];
                                   ga[i * k + kk] = s;
                                 }
                             });
                             ta.accumulate_grad(ga);
                           }
                           if (tb.requires_grad()) {
                             // gb = a^T * g
                             const auto av = ta.values();
                             std::vector<double> gb(k * n, 0.0);
                             parallel_for(k, kRowChunk, [&](std::size_t r0, std::size_t r1) {
                               for (std::size_t kk = r0; kk < r1; ++kk) {
                                 double* row = gb.data() + kk * n;
                                 for (std::size_t i = 0; i < m; ++i) {
                                   const double s = av[i * k + kk];
                                   if (s == 0.0) continue;
                                   for (std::size_t j = 0; j < n; ++j) row[j] += s * g[i * n + j];
                                 }
                               }
                             });
                             tb.accumulate_grad(gb);
                           }
                         });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.values()) {
    if (v == 0.0) throw DomainError("division by zero");
  }
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " for input " +
                         shape_string(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return Tensor::make_op("add_bias", x.shape(), std::move(out), {x, bias},
                         [m, n](const BackwardContext& ctx) {
                           ctx.inputs[0].accumulate_grad(ctx.grad);
                           if (ctx.inputs[1].requires_grad()) {
                             std::vector<double> gb(n, 0.0);
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j) gb[j] += ctx.grad[i * n + j];
                             ctx.inputs[1].accumulate_grad(gb);
                           }
                         });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor elu(const Tensor& x, double alpha) {
  return unary(
      "elu", x, [alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); },
      [alpha](double v, double y) { return v > 0.0 ? 1.0 : y + alpha; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) {
      throw DomainError("log of non-positive value " + std::to_string(xv[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor dropout(const Tensor& x, double rate, bool train, DropoutKey key) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate " + std::to_string(rate) + " outside [0, 1)");
  }
  if (!train || rate == 0.0) return x;
  const KeyedRng rng(key.seed, key.epoch, key.layer);
  const double keep_scale = 1.0 / (1.0 - rate);
  const auto xv = x.values();
  std::vector<double> factor(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    factor[i] = rng.uniform(i) < rate ? 0.0 : keep_scale;
    out[i] = xv[i] * factor[i];
  }
  return Tensor::make_op("dropout", x.shape(), std::move(out), {x},
                         [factor = std::move(factor)](const BackwardContext& ctx) {
                           std::vector<double> g(factor.size());
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] = ctx.grad[i] * factor[i];
                           ctx.inputs[0].accumulate_grad(g);
                         });
}

Tensor row_softmax(const Tensor& scores, const Mask& mask) {
  require_matrix(scores, "row_softmax");
  const std::size_t m = scores.rows(), n = scores.cols();
  if (!mask.empty() && mask.size() != m * n) {
    throw DimensionError("row_softmax mask of size " + std::to_string(mask.size()) +
                         " for scores " + shape_string(scores.shape()));
  }
  const auto sv = scores.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask.empty() && !mask[i * n + j]) continue;
      hi = std::max(hi, sv[i * n + j]);
      any = true;
    }
    if (!any) throw DegenerateRowError(i, "row_softmax (fully masked)");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask.empty() && !mask[i * n + j]) continue;
      out[i * n + j] = std::exp(sv[i * n + j] - hi);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return Tensor::make_op("row_softmax", scores.shape(), std::move(out), {scores},
                         [m, n](const BackwardContext& ctx) {
                           std::vector<double> g(m * n);
                           for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j)
                               dot += ctx.grad[i * n + j] * ctx.value[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               g[i * n + j] = ctx.value[i * n + j] * (ctx.grad[i * n + j] - dot);
                           }
                           ctx.inputs[0].accumulate_grad(g);
                         });
}

Tensor log_softmax(const Tensor& scores) {
  require_matrix(scores, "log_softmax");
  const std::size_t m = scores.rows(), n = scores.cols();
  const auto sv = scores.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) hi = std::max(hi, sv[i * n + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(sv[i * n + j] - hi);
    const double lse = hi + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = sv[i * n + j] - lse;
  }
  return Tensor::make_op("log_softmax", scores.shape(), std::move(out), {scores},
                         [m, n](const BackwardContext& ctx) {
                           std::vector<double> g(m * n);
                           for (std::size_t i = 0; i < m; ++i) {
                             double gsum = 0.0;
                             for (std::size_t j = 0; j < n; ++j) gsum += ctx.grad[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               g[i * n + j] =
                                   ctx.grad[i * n + j] - std::exp(ctx.value[i * n + j]) * gsum;
                           }
                           ctx.inputs[0].accumulate_grad(g);
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("layer_norm over zero columns");
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm gain " + shape_string(gain.shape()) + " / bias " +
                         shape_string(bias.shape()) + " for input " + shape_string(x.shape()));
  }
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> xhat(m * n), rstd(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xv[i * n + j] - mu) * rstd[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  return Tensor::make_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](const BackwardContext& ctx) {
        const auto g = ctx.grad;
        const auto gv = ctx.inputs[1].values();
        if (ctx.inputs[0].requires_grad()) {
          std::vector<double> gx(m * n);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_gh = 0.0, mean_ghx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = g[i * n + j] * gv[j];
              mean_gh += gh;
              mean_ghx += gh * xhat[i * n + j];
            }
            mean_gh *= inv_n;
            mean_ghx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = g[i * n + j] * gv[j];
              gx[i * n + j] = rstd[i] * (gh - mean_gh - xhat[i * n + j] * mean_ghx);
            }
          }
          ctx.inputs[0].accumulate_grad(gx);
        }
        if (ctx.inputs[1].requires_grad() || ctx.inputs[2].requires_grad()) {
          std::vector<double> gg(n, 0.0), gb(n, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              gg[j] += g[i * n + j] * xhat[i * n + j];
              gb[j] += g[i * n + j];
            }
          ctx.inputs[1].accumulate_grad(gg);
          ctx.inputs[2].accumulate_grad(gb);
        }
      });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return Tensor::make_op("sum", {}, {total}, {x}, [](const BackwardContext& ctx) {
    std::vector<double> g(ctx.inputs[0].size(), ctx.grad[0]);
    ctx.inputs[0].accumulate_grad(g);
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor nll_loss(const Tensor& log_probs, std::span<const std::uint32_t> ids,
                std::span<const std::uint16_t> labels) {
  require_matrix(log_probs, "nll_loss");
  if (ids.empty()) throw ContractError("nll_loss over an empty node set");
  const std::size_t n = log_probs.cols();
  const auto lp = log_probs.values();
  std::vector<std::size_t> offsets(ids.size());
  double total = 0.0;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const std::size_t i = ids[t];
    if (i >= log_probs.rows() || i >= labels.size() || labels[i] >= n) {
      throw DimensionError("nll_loss: node " + std::to_string(i) + " out of range");
    }
    offsets[t] = i * n + labels[i];
    total -= lp[offsets[t]];
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  return Tensor::make_op("nll_loss", {}, {total * inv}, {log_probs},
                         [offsets = std::move(offsets), inv](const BackwardContext& ctx) {
                           std::vector<double> g(ctx.inputs[0].size(), 0.0);
                           for (std::size_t o : offsets) g[o] -= ctx.grad[0] * inv;
                           ctx.inputs[0].accumulate_grad(g);
                         });
}

Tensor nll_from_probs(const Tensor& probs, std::span<const std::uint32_t> ids,
                      std::span<const std::uint16_t> labels) {
  require_matrix(probs, "nll_from_probs");
  if (ids.empty()) throw ContractError("nll_from_probs over an empty node set");
  constexpr double kFloor = 1e-12;
  const std::size_t n = probs.cols();
  const auto pv = probs.values();
  std::vector<std::size_t> offsets(ids.size());
  double total = 0.0;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const std::size_t i = ids[t];
    if (i >= probs.rows() || i >= labels.size() || labels[i] >= n) {
      throw DimensionError("nll_from_probs: node " + std::to_string(i) + " out of range");
    }
    offsets[t] = i * n + labels[i];
    total -= std::log(std::max(pv[offsets[t]], kFloor));
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  return Tensor::make_op("nll_from_probs", {}, {total * inv}, {probs},
                         [offsets = std::move(offsets), inv](const BackwardContext& ctx) {
                           const auto p = ctx.inputs[0].values();
                           std::vector<double> g(p.size(), 0.0);
                           for (std::size_t o : offsets)
                             if (p[o] > kFloor) g[o] -= ctx.grad[0] * inv / p[o];
                           ctx.inputs[0].accumulate_grad(g);
                         });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> ids,
                     std::span<const std::uint16_t> labels) {
  return nll_loss(log_softmax(logits), ids, labels);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols row mismatch: " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + off + j] = v[i * widths[k] + j];
    off += widths[k];
  }
  return Tensor::make_op("concat_cols", {m, total}, std::move(out), parts,
                         [m, total, widths](const BackwardContext& ctx) {
                           std::size_t off = 0;
                           for (std::size_t k = 0; k < widths.size(); ++k) {
                             if (ctx.inputs[k].requires_grad()) {
                               std::vector<double> g(m * widths[k]);
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < widths[k]; ++j)
                                   g[i * widths[k] + j] = ctx.grad[i * total + off + j];
                               ctx.inputs[k].accumulate_grad(g);
                             }
                             off += widths[k];
                           }
                         });
}

Tensor select_column(const Tensor& x, std::size_t col) {
  require_matrix(x, "select_column");
  const std::size_t m = x.rows(), n = x.cols();
  if (col >= n) throw DimensionError("select_column " + std::to_string(col) + " of " + shape_string(x.shape()));
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = x.values()[i * n + col];
  return Tensor::make_op("select_column", {m, 1}, std::move(out), {x},
                         [m, n, col](const BackwardContext& ctx) {
                           std::vector<double> g(m * n, 0.0);
                           for (std::size_t i = 0; i < m; ++i) g[i * n + col] = ctx.grad[i];
                           ctx.inputs[0].accumulate_grad(g);
                         });
}

Tensor gather_rows(const Tensor& x, std::span<const std::uint32_t> rows) {
  require_matrix(x, "gather_rows");
  const std::size_t n = x.cols();
  std::vector<std::uint32_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * n);
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] >= x.rows()) throw DimensionError("gather_rows index " + std::to_string(idx[t]) + " out of range");
    std::copy_n(x.values().begin() + idx[t] * n, n, out.begin() + t * n);
  }
  const std::size_t count = idx.size();
  return Tensor::make_op("gather_rows", {count, n}, std::move(out), {x},
                         [n, idx = std::move(idx)](const BackwardContext& ctx) {
                           std::vector<double> g(ctx.inputs[0].size(), 0.0);
                           for (std::size_t t = 0; t < idx.size(); ++t)
                             for (std::size_t j = 0; j < n; ++j) g[idx[t] * n + j] += ctx.grad[t * n + j];
                           ctx.inputs[0].accumulate_grad(g);
                         });
}

Tensor pick(const Tensor& x, std::size_t index) {
  if (index >= x.size()) throw DimensionError("pick index " + std::to_string(index) + " out of range");
  return Tensor::make_op("pick", {}, {x.values()[index]}, {x},
                         [index](const BackwardContext& ctx) {
                           std::vector<double> g(ctx.inputs[0].size(), 0.0);
                           g[index] = ctx.grad[0];
                           ctx.inputs[0].accumulate_grad(g);
                         });
}

}  // namespace grafuse
