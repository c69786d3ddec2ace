#pragma once

#include <cstdint>
#include <random>

namespace spinecheck {

using Engine = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed of the stream owned by trajectory `index` under `master`. Depends only
// on the pair, so a trajectory draws the same numbers whichever thread runs it.
inline constexpr std::uint64_t stream_seed(std::uint64_t master,
                                           std::uint64_t index) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(~index));
}

inline Engine stream_engine(std::uint64_t master, std::uint64_t index) {
  return Engine{stream_seed(master, index)};
}

}  // namespace spinecheck
