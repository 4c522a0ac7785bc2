#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace grafuse {

/// SplitMix64 finalizer. Bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the n-th draw depends only on (key, n), so a stream
/// keyed by (seed, epoch, layer) yields the same numbers no matter when or in
/// which order it is consumed.
class KeyedRng {
 public:
  constexpr explicit KeyedRng(std::uint64_t seed) noexcept : key_(mix64(seed)) {}
  constexpr KeyedRng(std::uint64_t seed, std::uint64_t a) noexcept
      : key_(mix64(mix64(seed) ^ mix64(a + 0x632be59bd9b4e019ULL))) {}
  constexpr KeyedRng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept
      : key_(mix64(KeyedRng(seed, a).key_ ^ mix64(b + 0x8cb92ba72f3d8dd7ULL))) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix64(key_ ^ mix64(counter));
  }

  /// Uniform in [0, 1) with 53 random bits.
  constexpr double uniform(std::uint64_t counter) const noexcept {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Sequential interface on top of the counter.
  std::uint64_t next_bits() noexcept { return bits(position_++); }
  double next_uniform() noexcept { return uniform(position_++); }

  /// Uniform integer in [0, bound) by rejection (unbiased).
  std::uint64_t next_below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % bound);
    for (;;) {
      const std::uint64_t r = next_bits();
      if (r < limit) return r % bound;
    }
  }

  /// Standard normal via Box-Muller; consumes two draws.
  double next_normal() noexcept {
    double u1 = next_uniform();
    const double u2 = next_uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t position_ = 0;
};

}  // namespace grafuse
