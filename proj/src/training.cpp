#include "grafuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "grafuse/error.hpp"
#include "grafuse/io.hpp"

namespace grafuse {

Adam::Adam(std::vector<Parameter>& params, AdamConfig config) : params_(&params), config_(config) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_->size(); ++k) {
    Parameter& p = (*params_)[k];
    if (!p.value.has_grad()) continue;
    const auto g = p.value.grad();
    auto w = p.value.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    const double decay = p.decay ? config_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + decay * w[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      w[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (!(optimizer.lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (patience == 0 || patience > max_epochs) throw ConfigError("patience must be in [1, max_epochs]");
}

TrainResult optimize(std::vector<Parameter>& params, const TrainConfig& config, const LossFn& loss,
                     const ValidationFn& validate) {
  config.validate();
  Adam adam(params, config.optimizer);
  TrainResult result;
  result.best_val_acc = validate();
  auto best = snapshot_parameters(params);
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (auto& p : params) p.value.zero_grad();
    const Tensor l = loss(epoch);
    const double value = l.item();
    if (!std::isfinite(value)) {
      restore_parameters(best, params);
      throw NumericError("training loss became " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                         "; restored the snapshot from epoch " + std::to_string(result.best_epoch));
    }
    l.backward();
    adam.step();
    const double acc = validate();
    result.history.push_back({epoch, value, acc});
    if (acc > result.best_val_acc) {
      result.best_val_acc = acc;
      result.best_epoch = epoch;
      best = snapshot_parameters(params);
    } else if (epoch - result.best_epoch >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  restore_parameters(best, params);
  return result;
}

TrainResult train_model(Model& model, const GraphContext& ctx, const GraphBundle& bundle, const TrainConfig& config) {
  const auto train_ids = bundle.nodes_in(Split::kTrain);
  const auto val_ids = bundle.nodes_in(Split::kVal);
  if (train_ids.empty() || val_ids.empty()) throw DataError("train and validation masks must be non-empty");
  const auto loss = [&](std::size_t epoch) {
    return cross_entropy(model.forward(ctx, {true, epoch}), train_ids, bundle.labels);
  };
  const auto validate = [&] { return evaluate(model.forward(ctx, {}), bundle, Split::kVal).accuracy; };
  const auto result = optimize(model.parameters(), config, loss, validate);
  spdlog::info("{}: best val acc {:.4f} at epoch {} ({} epochs run)", model_kind_name(model.kind()),
               result.best_val_acc, result.best_epoch, result.history.size());
  return result;
}

void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) {
    nlohmann::ordered_json line;
    line["epoch"] = r.epoch;
    line["train_loss"] = r.train_loss;
    line["val_acc"] = r.val_acc;
    out += line.dump() + "\n";
  }
  write_file(path, out);
}

// ---- metrics ---------------------------------------------------------------

std::vector<double> MetricsReport::class_accuracies() const {
  std::vector<double> out;
  for (const auto& c : per_class) out.push_back(c.accuracy);
  return out;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["count"] = count;
  j["accuracy"] = accuracy;
  j["cv"] = cv ? nlohmann::ordered_json(*cv) : nlohmann::ordered_json(nullptr);
  j["per_class"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    j["per_class"].push_back({{"class", c},
                              {"support", m.support},
                              {"accuracy", m.accuracy},
                              {"precision", m.precision},
                              {"recall", m.recall},
                              {"f1", m.f1}});
  }
  j["confusion"] = confusion;
  return j;
}

std::string MetricsReport::table(const std::string& title) const {
  std::ostringstream os;
  char buf[160];
  if (!title.empty()) os << title << "\n";
  std::snprintf(buf, sizeof buf, "  nodes %zu  accuracy %.4f  cv %s\n", count, accuracy,
                cv ? std::to_string(*cv).c_str() : "n/a");
  os << buf;
  os << "  class  support  accuracy  precision  recall     f1\n";
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    std::snprintf(buf, sizeof buf, "  %5zu  %7zu  %8.4f  %9.4f  %6.4f  %6.4f\n", c, m.support, m.accuracy,
                  m.precision, m.recall, m.f1);
    os << buf;
  }
  return os.str();
}

std::vector<std::uint16_t> argmax_rows(const Tensor& scores) {
  const std::size_t n = scores.rows(), c = scores.cols();
  const auto v = scores.values();
  std::vector<std::uint16_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (v[i * c + k] > v[i * c + best]) best = k;
    out[i] = static_cast<std::uint16_t>(best);
  }
  return out;
}

double coefficient_of_variation(std::span<const double> values, bool sample) {
  if (values.size() < 2) throw ContractError("coefficient of variation needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mu = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (mu == 0.0) throw DomainError("coefficient of variation with zero mean");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) return 0.0;  // avoid rounding noise in the mean
  double ss = 0.0;
  for (double v : values) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / (sample ? n - 1.0 : n)) / mu;
}

MetricsReport evaluate_predictions(std::span<const std::uint16_t> predicted, std::span<const std::uint16_t> labels,
                                   std::span<const std::uint32_t> ids, std::size_t num_classes) {
  if (ids.empty()) throw ContractError("evaluation over an empty node set");
  MetricsReport r;
  r.count = ids.size();
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (auto id : ids) {
    if (id >= predicted.size() || id >= labels.size()) throw DimensionError("prediction missing for node " + std::to_string(id));
    const auto t = labels[id], p = predicted[id];
    if (t >= num_classes || p >= num_classes) throw DataError("class id out of range at node " + std::to_string(id));
    ++r.confusion[t][p];
    correct += t == p;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  std::vector<double> supported;
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassMetrics m;
    std::size_t predicted_c = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      m.support += r.confusion[c][k];
      predicted_c += r.confusion[k][c];
    }
    const double tp = static_cast<double>(r.confusion[c][c]);
    m.recall = m.support ? tp / static_cast<double>(m.support) : 0.0;
    m.accuracy = m.recall;
    m.precision = predicted_c ? tp / static_cast<double>(predicted_c) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    if (m.support) supported.push_back(m.accuracy);
    r.per_class.push_back(m);
  }
  if (supported.size() >= 2 && std::accumulate(supported.begin(), supported.end(), 0.0) > 0.0) {
    r.cv = coefficient_of_variation(supported);
  }
  return r;
}

MetricsReport evaluate(const Tensor& scores, const GraphBundle& bundle, Split split) {
  if (scores.rows() != bundle.num_nodes || scores.cols() != bundle.num_classes) {
    throw DimensionError("scores " + shape_string(scores.shape()) + " for " + std::to_string(bundle.num_nodes) +
                         " nodes / " + std::to_string(bundle.num_classes) + " classes");
  }
  const auto ids = bundle.nodes_in(split);
  return evaluate_predictions(argmax_rows(scores), bundle.labels, ids, bundle.num_classes);
}

double silhouette_score(const Tensor& points, std::span<const std::uint16_t> labels) {
  const std::size_t n = points.rows(), d = points.cols();
  if (labels.size() != n) throw DimensionError("silhouette: one label per point required");
  const auto x = points.values();
  std::size_t classes = 0;
  for (auto l : labels) classes = std::max<std::size_t>(classes, l + 1u);
  std::vector<std::size_t> sizes(classes, 0);
  for (auto l : labels) ++sizes[l];
  double total = 0.0;
  std::vector<double> dist(classes);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(dist.begin(), dist.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (x[i * d + k] - x[j * d + k]) * (x[i * d + k] - x[j * d + k]);
      dist[labels[j]] += std::sqrt(s);
    }
    const std::size_t own = labels[i];
    if (sizes[own] < 2) continue;  // singleton clusters score 0
    const double a = dist[own] / static_cast<double>(sizes[own] - 1);
    double b = INFINITY;
    for (std::size_t c = 0; c < classes; ++c)
      if (c != own && sizes[c] > 0) b = std::min(b, dist[c] / static_cast<double>(sizes[c]));
    if (std::isfinite(b) && std::max(a, b) > 0.0) total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

// ---- export ----------------------------------------------------------------

void export_embeddings(const Tensor& embeddings, std::span<const std::uint16_t> labels,
                       const std::filesystem::path& dir, const std::string& source) {
  const std::size_t n = embeddings.rows(), d = embeddings.cols();
  if (labels.size() != n) throw DimensionError("export: one label per embedding row required");
  std::filesystem::create_directories(dir);
  std::vector<float> f(embeddings.values().begin(), embeddings.values().end());
  std::string bytes;
  append_le<float>(bytes, f);
  write_file(dir / "embeddings.f32", bytes);
  std::string lbytes;
  append_le<std::uint16_t>(lbytes, labels);
  write_file(dir / "labels.u16", lbytes);
  nlohmann::ordered_json meta;
  meta["num_nodes"] = n;
  meta["dim"] = d;
  meta["dtype"] = "f32le";
  meta["labels"] = "labels.u16";
  if (!source.empty()) meta["source"] = source;
  write_json(dir / "meta.json", meta);
}

ExportedEmbeddings read_embeddings(const std::filesystem::path& dir) {
  const auto meta = read_json(dir / "meta.json");
  ExportedEmbeddings e;
  e.num_nodes = meta.at("num_nodes").get<std::size_t>();
  e.dim = meta.at("dim").get<std::size_t>();
  const auto bytes = read_file(dir / "embeddings.f32");
  if (bytes.size() != e.num_nodes * e.dim * sizeof(float)) throw DataError("embeddings.f32 size does not match meta");
  e.values = decode_le<float>(bytes);
  const auto lbytes = read_file(dir / "labels.u16");
  if (lbytes.size() != e.num_nodes * 2) throw DataError("labels.u16 size does not match meta");
  e.labels = decode_le<std::uint16_t>(lbytes);
  return e;
}

}  // namespace grafuse
