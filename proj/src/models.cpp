#include "grafuse/models.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "grafuse/error.hpp"
#include "grafuse/io.hpp"
#include "grafuse/rng.hpp"

namespace grafuse {

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kGcn: return "gcn";
    case ModelKind::kResidualGnn: return "gnn";
    case ModelKind::kMultiHopGat: return "mhgat";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "gcn") return ModelKind::kGcn;
  if (name == "gnn") return ModelKind::kResidualGnn;
  if (name == "mhgat") return ModelKind::kMultiHopGat;
  throw ConfigError("unknown model kind '" + std::string(name) + "' (expected gcn, gnn or mhgat)");
}

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  if (c.hidden == 0) {
    c.hidden = kind == ModelKind::kGcn ? 16 : kind == ModelKind::kResidualGnn ? 64 : 32;
  }
  if (c.dropout < 0.0) c.dropout = kind == ModelKind::kGcn ? 0.5 : 0.3;
  if (c.dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (c.heads == 0) throw ConfigError("heads must be >= 1");
  if (kind == ModelKind::kMultiHopGat && c.hops == 0) throw ConfigError("hops must be >= 1");
  return c;
}

GraphContext GraphContext::build(const GraphBundle& bundle, std::size_t hops, std::size_t max_neighbors) {
  GraphContext ctx;
  ctx.num_nodes = bundle.num_nodes;
  ctx.num_classes = bundle.num_classes;
  ctx.features = bundle.feature_tensor();
  ctx.adjacency = normalize_adjacency(bundle.edges, bundle.num_nodes);
  if (hops > 0) ctx.hopset = build_hopset(bundle.edges, bundle.num_nodes, hops, max_neighbors);
  return ctx;
}

// ---- base ------------------------------------------------------------------

Model::Model(const ModelConfig& config, std::size_t feature_dim, std::size_t num_classes)
    : config_(config.resolved()), feature_dim_(feature_dim), num_classes_(num_classes) {
  if (feature_dim == 0 || num_classes == 0) throw ConfigError("model needs non-zero feature and class dims");
}

Tensor& Model::add_parameter(std::string name, Shape shape, bool decay, double fill) {
  params_.push_back({std::move(name), Tensor::full(std::move(shape), fill, true), decay});
  return params_.back().value;
}

Tensor& Model::add_glorot(std::string name, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  KeyedRng rng(config_.seed, 0x9100 + params_.size());
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = bound * (2.0 * rng.next_uniform() - 1.0);
  params_.push_back({std::move(name), Tensor::from({fan_in, fan_out}, std::move(v), true), true});
  return params_.back().value;
}

void Model::check_context(const GraphContext& ctx) const {
  if (ctx.features.cols() != feature_dim_ || ctx.num_classes != num_classes_) {
    throw DimensionError("model expects " + std::to_string(feature_dim_) + " features / " +
                         std::to_string(num_classes_) + " classes, data has " +
                         std::to_string(ctx.features.cols()) + " / " + std::to_string(ctx.num_classes));
  }
  if (ctx.hopset.num_hops() < required_hops()) {
    throw ContractError("context built with " + std::to_string(ctx.hopset.num_hops()) + " hops, model needs " +
                        std::to_string(required_hops()));
  }
}

// ---- GCN -------------------------------------------------------------------

GcnModel::GcnModel(const ModelConfig& config, std::size_t feature_dim, std::size_t num_classes)
    : Model(config, feature_dim, num_classes) {
  add_glorot("W0", feature_dim, config_.hidden);
  add_parameter("b0", {config_.hidden}, false, 0.0);
  add_glorot("W1", config_.hidden, num_classes);
  add_parameter("b1", {num_classes}, false, 0.0);
}

Tensor GcnModel::embed(const GraphContext& ctx, ForwardMode mode) const {
  check_context(ctx);
  const Tensor x = dropout(ctx.features, config_.dropout, mode.train, dropout_key(mode, 0));
  return relu(add_bias(spmm(ctx.adjacency, matmul(x, param(0))), param(1)));
}

Tensor GcnModel::head(const GraphContext& ctx, const Tensor& embedding, ForwardMode mode) const {
  const Tensor h = dropout(embedding, config_.dropout, mode.train, dropout_key(mode, 1));
  return add_bias(spmm(ctx.adjacency, matmul(h, param(2))), param(3));
}

// ---- residual GNN ----------------------------------------------------------

// Parameter order: W0 b0 gain bias [R] W1 b1
ResidualGnnModel::ResidualGnnModel(const ModelConfig& config, std::size_t feature_dim, std::size_t num_classes)
    : Model(config, feature_dim, num_classes), projected_residual_(feature_dim != config_.hidden) {
  add_glorot("W0", feature_dim, config_.hidden);
  add_parameter("b0", {config_.hidden}, false, 0.0);
  add_parameter("norm.gain", {config_.hidden}, false, 1.0);
  add_parameter("norm.bias", {config_.hidden}, false, 0.0);
  if (projected_residual_) add_glorot("R", feature_dim, config_.hidden);
  add_glorot("W1", config_.hidden, num_classes);
  add_parameter("b1", {num_classes}, false, 0.0);
}

Tensor ResidualGnnModel::embed(const GraphContext& ctx, ForwardMode mode) const {
  check_context(ctx);
  const Tensor x = dropout(ctx.features, config_.dropout, mode.train, dropout_key(mode, 0));
  Tensor z = add_bias(spmm(ctx.adjacency, matmul(x, param(0))), param(1));
  z = layer_norm(z, param(2), param(3), config_.norm_eps);
  const Tensor skip = projected_residual_ ? matmul(x, param(4)) : x;
  return add(relu(z), skip);
}

Tensor ResidualGnnModel::head(const GraphContext& ctx, const Tensor& embedding, ForwardMode mode) const {
  const std::size_t w1 = projected_residual_ ? 5 : 4;
  const Tensor h = dropout(embedding, config_.dropout, mode.train, dropout_key(mode, 1));
  return add_bias(spmm(ctx.adjacency, matmul(h, param(w1))), param(w1 + 1));
}

// ---- attention -------------------------------------------------------------

namespace {

struct Attended {
  Tensor transformed;  // W h
  Tensor alpha;        // one coefficient per stored entry
};

Attended attend(const Tensor& h, const SparseMatrix& structure, const AttentionHead& head, double slope) {
  if (structure.rows != structure.cols || structure.rows != h.rows()) {
    throw DimensionError("gat_attention: structure " + std::to_string(structure.rows) + "x" +
                         std::to_string(structure.cols) + " for input " + shape_string(h.shape()));
  }
  Tensor wh = matmul(h, head.weight);
  const Tensor scores = edge_scores(structure, matmul(wh, head.a_src), matmul(wh, head.a_dst));
  return {wh, segment_softmax(structure, leaky_relu(scores, slope))};
}

}  // namespace

Tensor gat_coefficients(const Tensor& h, const SparseMatrix& structure, const AttentionHead& head, double slope) {
  return attend(h, structure, head, slope).alpha;
}

Tensor gat_attention(const Tensor& h, const SparseMatrix& structure, const AttentionHead& head, double slope) {
  const auto [wh, alpha] = attend(h, structure, head, slope);
  return edge_aggregate(structure, alpha, wh);
}

// Parameter order: per hop, per head {W, a_src, a_dst}; beta; gain; bias; [R];
// per output head {W, a_src, a_dst}; output bias.
MultiHopGatModel::MultiHopGatModel(const ModelConfig& config, std::size_t feature_dim, std::size_t num_classes)
    : Model(config, feature_dim, num_classes) {
  const std::size_t d = config_.hidden, heads = config_.heads, emb = d * heads;
  for (std::size_t k = 1; k <= config_.hops; ++k)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::string p = "hop" + std::to_string(k) + ".head" + std::to_string(h) + ".";
      add_glorot(p + "W", feature_dim, d);
      add_glorot(p + "a_src", d, 1);
      add_glorot(p + "a_dst", d, 1);
    }
  hop_logits_index_ = params_.size();
  add_parameter("beta", {1, config_.hops}, false, 0.0);
  add_parameter("norm.gain", {emb}, false, 1.0);
  add_parameter("norm.bias", {emb}, false, 0.0);
  if (feature_dim != emb) add_glorot("R", feature_dim, emb);
  first_output_head_ = params_.size();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string p = "out.head" + std::to_string(h) + ".";
    add_glorot(p + "W", emb, num_classes);
    add_glorot(p + "a_src", num_classes, 1);
    add_glorot(p + "a_dst", num_classes, 1);
  }
  add_parameter("out.bias", {num_classes}, false, 0.0);
}

AttentionHead MultiHopGatModel::hidden_head(std::size_t hop, std::size_t head) const {
  const std::size_t base = 3 * ((hop - 1) * config_.heads + head);
  return {param(base), param(base + 1), param(base + 2)};
}

Tensor MultiHopGatModel::hop_weights() const { return row_softmax(param(hop_logits_index_)); }

Tensor MultiHopGatModel::hop_mixture(const GraphContext& ctx, const Tensor& input) const {
  const Tensor weights = hop_weights();
  Tensor mix;
  for (std::size_t k = 1; k <= config_.hops; ++k) {
    const SparseMatrix& level = ctx.hopset.hop(k);
    Tensor z;
    if (k > 1 && level.nnz() == level.rows) {
      // Only self-loops: the level has no k-hop pairs and contributes nothing.
      spdlog::debug("hop {} is empty; contributing zeros", k);
      z = Tensor::zeros({ctx.num_nodes, embedding_dim()});
    } else {
      std::vector<Tensor> parts;
      for (std::size_t h = 0; h < config_.heads; ++h)
        parts.push_back(gat_attention(input, level, hidden_head(k, h), config_.leaky_slope));
      z = parts.size() == 1 ? parts.front() : concat_cols(parts);
    }
    const Tensor term = mul(pick(weights, k - 1), z);
    mix = mix.defined() ? add(mix, term) : term;
  }
  return mix;
}

Tensor MultiHopGatModel::embed(const GraphContext& ctx, ForwardMode mode) const {
  check_context(ctx);
  const Tensor x = dropout(ctx.features, config_.dropout, mode.train, dropout_key(mode, 0));
  const Tensor z = layer_norm(hop_mixture(ctx, x), param(hop_logits_index_ + 1), param(hop_logits_index_ + 2),
                              config_.norm_eps);
  const bool projected = feature_dim_ != embedding_dim();
  return add(elu(z), projected ? matmul(x, param(hop_logits_index_ + 3)) : x);
}

Tensor MultiHopGatModel::head(const GraphContext& ctx, const Tensor& embedding, ForwardMode mode) const {
  const Tensor h = dropout(embedding, config_.dropout, mode.train, dropout_key(mode, 1));
  const SparseMatrix& level = ctx.hopset.hop(1);
  Tensor total;
  for (std::size_t k = 0; k < config_.heads; ++k) {
    const std::size_t base = first_output_head_ + 3 * k;
    const Tensor o = gat_attention(h, level, {param(base), param(base + 1), param(base + 2)}, config_.leaky_slope);
    total = total.defined() ? add(total, o) : o;
  }
  return add_bias(scale(total, 1.0 / static_cast<double>(config_.heads)), params_.back().value);
}

std::unique_ptr<Model> make_model(const ModelConfig& config, std::size_t feature_dim, std::size_t num_classes) {
  switch (config.kind) {
    case ModelKind::kGcn: return std::make_unique<GcnModel>(config, feature_dim, num_classes);
    case ModelKind::kResidualGnn: return std::make_unique<ResidualGnnModel>(config, feature_dim, num_classes);
    case ModelKind::kMultiHopGat: return std::make_unique<MultiHopGatModel>(config, feature_dim, num_classes);
  }
  throw ConfigError("unknown model kind");
}

// ---- parameter snapshots and checkpoints ----------------------------------

void copy_parameters(const std::vector<Parameter>& from, std::vector<Parameter>& to) {
  if (from.size() != to.size()) throw ContractError("parameter lists differ in length");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].value.shape() != to[i].value.shape()) {
      throw DimensionError("parameter " + to[i].name + ": " + shape_string(from[i].value.shape()) + " vs " +
                           shape_string(to[i].value.shape()));
    }
    const auto src = from[i].value.values();
    std::copy(src.begin(), src.end(), to[i].value.mutable_values().begin());
  }
}

std::vector<std::vector<double>> snapshot_parameters(const std::vector<Parameter>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.value.values().begin(), p.value.values().end());
  return out;
}

void restore_parameters(const std::vector<std::vector<double>>& snapshot, std::vector<Parameter>& params) {
  if (snapshot.size() != params.size()) throw ContractError("snapshot does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].value.mutable_values();
    if (dst.size() != snapshot[i].size()) throw ContractError("snapshot size mismatch for " + params[i].name);
    std::copy(snapshot[i].begin(), snapshot[i].end(), dst.begin());
  }
}

std::string encode_parameters(const std::vector<Parameter>& params) {
  std::string out;
  for (const auto& p : params) append_le<double>(out, p.value.values());
  return out;
}

void decode_parameters(std::string_view bytes, std::vector<Parameter>& params, const std::string& source) {
  std::size_t expected = 0;
  for (const auto& p : params) expected += p.value.size() * sizeof(double);
  if (bytes.size() != expected) {
    throw DataError(source + ": expected " + std::to_string(expected) + " bytes of parameters, found " +
                    std::to_string(bytes.size()));
  }
  std::size_t offset = 0;
  for (auto& p : params) {
    const std::size_t len = p.value.size() * sizeof(double);
    const auto values = decode_le<double>(std::span<const char>(bytes.data() + offset, len));
    std::copy(values.begin(), values.end(), p.value.mutable_values().begin());
    offset += len;
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir, std::uint64_t epoch) {
  std::filesystem::create_directories(dir);
  const auto& c = model.config();
  nlohmann::ordered_json meta;
  meta["format"] = "grafuse-model-1";
  meta["kind"] = model_kind_name(model.kind());
  meta["feature_dim"] = model.feature_dim();
  meta["num_classes"] = model.num_classes();
  meta["hidden"] = c.hidden;
  meta["heads"] = c.heads;
  meta["hops"] = c.hops;
  meta["max_neighbors"] = c.max_neighbors;
  meta["dropout"] = c.dropout;
  meta["leaky_slope"] = c.leaky_slope;
  meta["norm_eps"] = c.norm_eps;
  meta["seed"] = c.seed;
  meta["epoch"] = epoch;
  meta["parameters"] = nlohmann::ordered_json::array();
  for (const auto& p : model.parameters()) {
    meta["parameters"].push_back({{"name", p.name}, {"shape", p.value.shape()}});
  }
  write_json(dir / "meta.json", meta);
  write_file(dir / "params.bin", encode_parameters(model.parameters()));
}

LoadedModel load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("checkpoint " + dir.string() + " not found");
  const auto meta = read_json(dir / "meta.json");
  LoadedModel out;
  try {
    if (meta.at("format") != "grafuse-model-1") throw DataError("checkpoint " + dir.string() + ": unknown format");
    ModelConfig c;
    c.kind = parse_model_kind(meta.at("kind").get<std::string>());
    c.hidden = meta.at("hidden").get<std::size_t>();
    c.heads = meta.at("heads").get<std::size_t>();
    c.hops = meta.at("hops").get<std::size_t>();
    c.max_neighbors = meta.at("max_neighbors").get<std::size_t>();
    c.dropout = meta.at("dropout").get<double>();
    c.leaky_slope = meta.at("leaky_slope").get<double>();
    c.norm_eps = meta.at("norm_eps").get<double>();
    c.seed = meta.at("seed").get<std::uint64_t>();
    out.epoch = meta.at("epoch").get<std::uint64_t>();
    out.model = make_model(c, meta.at("feature_dim").get<std::size_t>(), meta.at("num_classes").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + dir.string() + "/meta.json: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("checkpoint " + dir.string() + "/meta.json: " + e.what());
  }
  decode_parameters(read_file(dir / "params.bin"), out.model->parameters(), (dir / "params.bin").string());
  return out;
}

}  // namespace grafuse
