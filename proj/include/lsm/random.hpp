#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace lsm {

/// Seeded engine used everywhere in the library.
using Rng = std::mt19937_64;

/// In-place Fisher-Yates shuffle. Spelled out (instead of std::shuffle) so the
/// permutation for a given seed does not depend on the standard library.
template <class T>
void fisher_yates(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace lsm
