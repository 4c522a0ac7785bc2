#include <fstream>
#include <iterator>

#include "grafuse/io.hpp"

namespace grafuse {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "GRB1";

std::size_t meta_count(const nlohmann::json& meta, const char* key) {
  if (!meta.contains(key)) throw BundleLoadError("meta.json", std::string("missing field '") + key + "'");
  const auto& v = meta.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw BundleLoadError("meta.json", std::string("field '") + key + "' is not a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::string read_exact(const fs::path& dir, const char* name, std::size_t expected_bytes) {
  std::string bytes;
  try {
    bytes = read_file(dir / name);
  } catch (const DataError&) {
    throw BundleLoadError(name, "cannot open file");
  }
  if (bytes.size() != expected_bytes) {
    throw BundleLoadError(name, std::string(bytes.size() < expected_bytes ? "truncated" : "trailing data") +
                                    " at byte offset " + std::to_string(std::min(bytes.size(), expected_bytes)) +
                                    " (expected " + std::to_string(expected_bytes) + " bytes, found " +
                                    std::to_string(bytes.size()) + ")");
  }
  return bytes;
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::ordered_json& doc) {
  write_file(path, doc.dump(2) + "\n");
}

GraphBundle read_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw BundleLoadError(dir.string(), "not a directory");
  nlohmann::json meta;
  try {
    meta = read_json(dir / "meta.json");
  } catch (const DataError& e) {
    throw BundleLoadError("meta.json", e.what());
  }
  if (!meta.is_object() || !meta.contains("magic") || meta["magic"] != kMagic) {
    throw BundleLoadError("meta.json", "magic mismatch (expected \"GRB1\")");
  }
  GraphBundle g;
  g.num_nodes = meta_count(meta, "num_nodes");
  g.num_classes = meta_count(meta, "num_classes");
  g.feature_dim = meta_count(meta, "feature_dim");
  const std::size_t num_edges = meta_count(meta, "num_edges");

  const std::string features = read_exact(dir, "features.bin", g.num_nodes * g.feature_dim * 4);
  const auto f32 = decode_le<float>(features);
  g.features.assign(f32.begin(), f32.end());

  const std::string edges = read_exact(dir, "edges.bin", num_edges * 8);
  const auto ids = decode_le<std::uint32_t>(edges);
  g.edges.resize(num_edges);
  for (std::size_t e = 0; e < num_edges; ++e) g.edges[e] = {ids[2 * e], ids[2 * e + 1]};

  g.labels = decode_le<std::uint16_t>(read_exact(dir, "labels.bin", g.num_nodes * 2));

  const std::string masks = read_exact(dir, "masks.bin", g.num_nodes);
  g.split.resize(g.num_nodes);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    const auto code = static_cast<std::uint8_t>(masks[i]);
    if (code > 3) {
      throw BundleLoadError("masks.bin", "invalid split code " + std::to_string(code) + " at byte offset " +
                                             std::to_string(i));
    }
    g.split[i] = static_cast<Split>(code);
  }

  try {
    g.validate();
  } catch (const DataError& e) {
    throw BundleLoadError(dir.string(), e.what());
  }
  return g;
}

void write_bundle(const GraphBundle& g, const fs::path& dir) {
  g.validate();
  fs::create_directories(dir);

  nlohmann::ordered_json meta;
  meta["magic"] = kMagic;
  meta["num_nodes"] = g.num_nodes;
  meta["num_classes"] = g.num_classes;
  meta["feature_dim"] = g.feature_dim;
  meta["num_edges"] = g.edges.size();
  write_json(dir / "meta.json", meta);

  std::string buf;
  std::vector<float> f32(g.features.begin(), g.features.end());
  append_le<float>(buf, f32);
  write_file(dir / "features.bin", buf);

  buf.clear();
  std::vector<std::uint32_t> ids;
  ids.reserve(g.edges.size() * 2);
  for (const auto& [s, d] : g.edges) {
    ids.push_back(s);
    ids.push_back(d);
  }
  append_le<std::uint32_t>(buf, ids);
  write_file(dir / "edges.bin", buf);

  buf.clear();
  append_le<std::uint16_t>(buf, g.labels);
  write_file(dir / "labels.bin", buf);

  buf.assign(g.num_nodes, '\0');
  for (std::size_t i = 0; i < g.num_nodes; ++i) buf[i] = static_cast<char>(g.split[i]);
  write_file(dir / "masks.bin", buf);
}

}  // namespace grafuse
