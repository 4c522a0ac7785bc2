#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grafuse/error.hpp"
#include "grafuse/graph.hpp"

namespace grafuse {

/// Bundle read failure naming the file, and the field or byte offset involved.
class BundleLoadError : public DataError {
 public:
  BundleLoadError(const std::string& file, const std::string& detail)
      : DataError("bundle " + file + ": " + detail) {}
};

/// Reads a graph-bundle directory (meta.json, features.bin, edges.bin,
/// labels.bin, masks.bin) and validates every bundle invariant. Throws
/// BundleLoadError before returning anything on any defect.
GraphBundle read_bundle(const std::filesystem::path& dir);

/// Writes the bundle directory. Features are stored as f32.
void write_bundle(const GraphBundle& bundle, const std::filesystem::path& dir);

// ---- little-endian binary helpers ---------------------------------------

template <typename T>
T byteswap_value(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  std::memcpy(&v, b, sizeof(T));
  return v;
}

template <typename T>
void append_le(std::string& out, std::span<const T> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    T v = values[i];
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    std::memcpy(out.data() + start + i * sizeof(T), &v, sizeof(T));
  }
}

template <typename T>
std::vector<T> decode_le(std::span<const char> bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v;
    std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    out[i] = v;
  }
  return out;
}

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& doc);

}  // namespace grafuse
