#include <cmath>
#include <string>

#include "grafuse/error.hpp"
#include "grafuse/graph.hpp"
#include "grafuse/rng.hpp"

namespace grafuse {

namespace {

// Stream ids under the generator seed.
enum Stream : std::uint64_t { kEdges = 1, kMeans = 2, kNoise = 3, kSplit = 4 };

double per_block(const std::vector<double>& v, std::size_t b, const char* field) {
  if (v.size() == 1) return v[0];
  if (b < v.size()) return v[b];
  throw ConfigError(std::string("sbm: ") + field + " needs one value or one per block");
}

}  // namespace

GraphBundle generate_sbm(const SbmConfig& cfg) {
  const std::size_t num_blocks = cfg.block_sizes.size();
  if (num_blocks == 0) throw ConfigError("sbm: block_sizes is empty");
  if (num_blocks > 65535) throw ConfigError("sbm: too many blocks for u16 labels");
  if (cfg.feature_dim == 0) throw ConfigError("sbm: feature_dim must be positive");
  if (cfg.p_in.empty() || cfg.class_signal.empty()) throw ConfigError("sbm: p_in and class_signal are required");
  if ((cfg.p_in.size() != 1 && cfg.p_in.size() != num_blocks) ||
      (cfg.class_signal.size() != 1 && cfg.class_signal.size() != num_blocks)) {
    throw ConfigError("sbm: p_in / class_signal need one value or one per block");
  }
  for (double p : cfg.p_in)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("sbm: p_in outside [0,1]");
  if (!(cfg.p_out >= 0.0 && cfg.p_out <= 1.0)) throw ConfigError("sbm: p_out outside [0,1]");
  if (!(cfg.train_fraction >= 0.0 && cfg.val_fraction >= 0.0 && cfg.train_fraction + cfg.val_fraction <= 1.0)) {
    throw ConfigError("sbm: split fractions must be non-negative and sum to <= 1");
  }

  GraphBundle g;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    if (cfg.block_sizes[b] == 0) throw ConfigError("sbm: block " + std::to_string(b) + " is empty");
    g.num_nodes += cfg.block_sizes[b];
    g.labels.insert(g.labels.end(), cfg.block_sizes[b], static_cast<std::uint16_t>(b));
  }
  if (g.num_nodes > 0xffffffffULL) throw ConfigError("sbm: too many nodes for u32 ids");
  g.num_classes = num_blocks;
  g.feature_dim = cfg.feature_dim;
  const std::size_t n = g.num_nodes;

  const KeyedRng edge_rng(cfg.seed, kEdges);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double p = g.labels[i] == g.labels[j] ? per_block(cfg.p_in, g.labels[i], "p_in") : cfg.p_out;
      if (edge_rng.uniform(i * n + j) < p) {
        g.edges.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(j));
      }
    }
  g.edges = canonical_edges(g.edges);

  // Class means: random directions scaled to the requested norm.
  const std::size_t d = cfg.feature_dim;
  std::vector<double> means(num_blocks * d);
  KeyedRng mean_rng(cfg.seed, kMeans);
  for (std::size_t b = 0; b < num_blocks; ++b) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      means[b * d + k] = mean_rng.next_normal();
      norm += means[b * d + k] * means[b * d + k];
    }
    const double s = per_block(cfg.class_signal, b, "class_signal") / std::sqrt(norm);
    for (std::size_t k = 0; k < d; ++k) means[b * d + k] *= s;
  }
  KeyedRng noise_rng(cfg.seed, kNoise);
  g.features.resize(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double v = means[g.labels[i] * d + k] + noise_rng.next_normal();
      g.features[i * d + k] = static_cast<double>(static_cast<float>(v));
    }

  // Stratified split: shuffle each block, then carve train / val / test.
  g.split.assign(n, Split::kUnused);
  std::size_t first = 0;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    const std::size_t size = cfg.block_sizes[b];
    std::vector<NodeId> members(size);
    for (std::size_t t = 0; t < size; ++t) members[t] = static_cast<NodeId>(first + t);
    KeyedRng shuffle_rng(cfg.seed, kSplit, b);
    for (std::size_t t = size; t > 1; --t) std::swap(members[t - 1], members[shuffle_rng.next_below(t)]);
    const auto n_train = static_cast<std::size_t>(std::lround(cfg.train_fraction * static_cast<double>(size)));
    const auto n_val = std::min(size - n_train,
                                static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(size))));
    for (std::size_t t = 0; t < size; ++t) {
      g.split[members[t]] = t < n_train ? Split::kTrain : (t < n_train + n_val ? Split::kVal : Split::kTest);
    }
    first += size;
  }
  return g;
}

GraphBundle generate_sbm(std::span<const std::size_t> block_sizes, double p_in, double p_out,
                         std::size_t feature_dim, double class_signal, std::uint64_t seed) {
  SbmConfig cfg;
  cfg.block_sizes.assign(block_sizes.begin(), block_sizes.end());
  cfg.p_in = {p_in};
  cfg.p_out = p_out;
  cfg.feature_dim = feature_dim;
  cfg.class_signal = {class_signal};
  cfg.seed = seed;
  return generate_sbm(cfg);
}

}  // namespace grafuse
