#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace robhet::detail {

// Draws `count` subsets of `size` distinct indices from [0, n) from a single
// seeded stream. All subsets are drawn up front so evaluation order cannot
// change which subsets are seen.
inline std::vector<std::vector<std::size_t>> draw_subsets(std::size_t n, std::size_t size, int count,
                                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(std::max(count, 0)));
  for (auto& s : out) {
    s.reserve(size);
    while (s.size() < size) {
      const std::size_t i = pick(rng);
      if (std::find(s.begin(), s.end(), i) == s.end()) s.push_back(i);
    }
  }
  return out;
}

}  // namespace robhet::detail
