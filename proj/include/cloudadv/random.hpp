#pragma once

#include <cstdint>
#include <random>

namespace cloudadv {

using Rng = std::mt19937_64;

// Uniform draw on the open interval (0, 1), built from the top 53 bits so the
// stream is identical across standard-library implementations.
inline double unit_open(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

// Uniform draw on [lo, hi).
inline double uniform(Rng& rng, double lo, double hi) { return lo + unit_open(rng) * (hi - lo); }

// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

// splitmix64 finalizer; derives an independent stream seed from (base, index).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace cloudadv
