#pragma once

#include <cstdint>

namespace silt {

/// Counter-based generator: draw i of a stream is a pure function of
/// (seed, counter), so a saved state replays bit-for-bit.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (++counter);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  friend bool operator==(const RngState&, const RngState&) = default;
};

/// Derives an independent stream for a sub-purpose (e.g. epoch shuffling).
inline RngState derive_stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) noexcept {
  RngState mix{seed ^ (purpose * 0xD1B54A32D192ED03ULL), index};
  return RngState{mix.next_u64(), 0};
}

}  // namespace silt
