#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace maya {

// Standard library distributions are implementation-defined, so every
// seeded draw in the project goes through these helpers to stay bit-stable
// across toolchains.
using Rng = std::mt19937_64;

/// Uniform integer in [0, bound). Rejection sampling, no modulo bias.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  if (bound <= 1) return 0;
  // bucket == floor(2^64 / bound)
  const std::uint64_t bucket = (Rng::max() - bound + 1) / bound + 1;
  for (;;) {
    const std::uint64_t draw = rng();
    const std::uint64_t value = draw / bucket;
    if (value < bound) return value;
  }
}

/// Uniform double in [0, 1) with 53 bits of resolution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double uniform_real(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace maya
