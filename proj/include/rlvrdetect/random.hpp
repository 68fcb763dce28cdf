#pragma once

// Seeded draws whose results are identical across standard libraries:
// std::mt19937_64's output sequence is fixed by the standard, the
// distributions built on it are not.

#include <cstdint>
#include <limits>
#include <random>
#include <utility>
#include <vector>

namespace rlvrdetect {

/// Uniform integer in [0, bound) by rejection sampling. bound must be > 0.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw = rng();
  while (draw >= limit) draw = rng();
  return draw % bound;
}

/// Uniform real in [0, 1) from the top 53 bits.
inline double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Fisher-Yates on the first `count` positions: afterwards items[0..count)
/// is a uniform sample without replacement.
template <class T>
void partial_shuffle(std::vector<T>& items, std::size_t count, std::mt19937_64& rng) {
  const std::size_t n = items.size();
  for (std::size_t i = 0; i < count && i + 1 < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, n - i));
    std::swap(items[i], items[j]);
  }
}

}  // namespace rlvrdetect
