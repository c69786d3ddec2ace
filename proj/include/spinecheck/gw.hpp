#pragma once

// Galton-Watson generation sizes under the original law P and under the
// size-biased law Q, where Q restricted to generation n has density X_n / m^n.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spinecheck/offspring.hpp"
#include "spinecheck/parallel.hpp"
#include "spinecheck/rng.hpp"

namespace spinecheck {

inline constexpr std::uint64_t kPopulationCap = 10'000'000;

class PopulationOverflow : public std::runtime_error {
 public:
  PopulationOverflow(unsigned generation, std::uint64_t size)
      : std::runtime_error("population cap of " + std::to_string(kPopulationCap) +
                           " exceeded at generation " + std::to_string(generation) +
                           " (size " + std::to_string(size) + ")"),
        generation_(generation) {}

  [[nodiscard]] unsigned generation() const noexcept { return generation_; }

 private:
  unsigned generation_;
};

struct GWTrajectory {
  std::vector<std::uint64_t> sizes;  // X_0 .. X_N
  double mean_m = 1.0;

  [[nodiscard]] unsigned horizon() const noexcept {
    return static_cast<unsigned>(sizes.size() - 1);
  }
};

struct SpineTrajectory {
  std::vector<std::uint64_t> sizes;  // X_0 .. X_N, all >= 1
  double mean_m = 1.0;
  // Position of the spine individual within each generation, individuals
  // ordered by parent then birth order.
  std::vector<std::uint64_t> spine_rank;

  [[nodiscard]] unsigned horizon() const noexcept {
    return static_cast<unsigned>(sizes.size() - 1);
  }
};

struct ExtinctionTime {
  std::optional<unsigned> generation;  // empty: still alive at the horizon
  unsigned horizon = 0;

  [[nodiscard]] bool censored() const noexcept { return !generation.has_value(); }
  friend bool operator==(const ExtinctionTime&, const ExtinctionTime&) = default;
};

namespace detail {

inline void check_horizon(unsigned horizon) {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
}

template <class Rng>
std::uint64_t offspring_total(const OffspringDistribution& dist, std::uint64_t parents,
                              Rng& rng) {
  std::uint64_t total = 0;
  for (std::uint64_t i = 0; i < parents; ++i) total += dist.sample(rng);
  return total;
}

}  // namespace detail

template <class Rng>
GWTrajectory simulate_p(const OffspringDistribution& dist, unsigned horizon, Rng& rng) {
  detail::check_horizon(horizon);
  GWTrajectory traj;
  traj.mean_m = dist.mean();
  traj.sizes.reserve(horizon + 1);
  traj.sizes.push_back(1);
  for (unsigned n = 1; n <= horizon; ++n) {
    const std::uint64_t next = detail::offspring_total(dist, traj.sizes.back(), rng);
    if (next > kPopulationCap) throw PopulationOverflow(n, next);
    traj.sizes.push_back(next);
  }
  return traj;
}

inline GWTrajectory simulate_p(const OffspringDistribution& dist, unsigned horizon,
                               std::uint64_t seed) {
  Engine rng{seed};
  return simulate_p(dist, horizon, rng);
}

// The spine reproduces by the size-biased law and hands the spine to a
// uniformly chosen child; everyone else reproduces by `dist`.
template <class Rng>
SpineTrajectory simulate_q_spine(const OffspringDistribution& dist, unsigned horizon,
                                 Rng& rng) {
  detail::check_horizon(horizon);
  const SizeBiasedDistribution spine_law = size_bias(dist);
  SpineTrajectory traj;
  traj.mean_m = dist.mean();
  traj.sizes.reserve(horizon + 1);
  traj.spine_rank.reserve(horizon + 1);
  traj.sizes.push_back(1);
  traj.spine_rank.push_back(0);
  for (unsigned n = 1; n <= horizon; ++n) {
    const std::uint64_t current = traj.sizes.back();
    const std::uint64_t rank = traj.spine_rank.back();
    const std::uint64_t before = detail::offspring_total(dist, rank, rng);
    const std::uint32_t spine_kids = spine_law.sample(rng);
    const std::uint64_t pick =
        std::uniform_int_distribution<std::uint64_t>(0, spine_kids - 1)(rng);
    const std::uint64_t after = detail::offspring_total(dist, current - rank - 1, rng);
    const std::uint64_t next = before + spine_kids + after;
    if (next > kPopulationCap) throw PopulationOverflow(n, next);
    traj.sizes.push_back(next);
    traj.spine_rank.push_back(before + pick);
  }
  return traj;
}

inline SpineTrajectory simulate_q_spine(const OffspringDistribution& dist, unsigned horizon,
                                        std::uint64_t seed) {
  Engine rng{seed};
  return simulate_q_spine(dist, horizon, rng);
}

// Z_n = X_n / m^n.
template <class Trajectory>
double z_value(const Trajectory& traj, unsigned n) {
  if (n >= traj.sizes.size()) {
    throw std::out_of_range("generation " + std::to_string(n) + " beyond the horizon");
  }
  return static_cast<double>(traj.sizes[n]) / std::pow(traj.mean_m, static_cast<double>(n));
}

inline ExtinctionTime extinction_time(const GWTrajectory& traj) {
  ExtinctionTime out;
  out.horizon = traj.horizon();
  for (unsigned n = 0; n < traj.sizes.size(); ++n) {
    if (traj.sizes[n] == 0) {
      out.generation = n;
      break;
    }
  }
  return out;
}

// Batches of independent trajectories; trajectory i draws from
// stream_engine(master_seed, i), so results do not depend on `threads`.
inline std::vector<GWTrajectory> simulate_p_batch(const OffspringDistribution& dist,
                                                  unsigned horizon, std::size_t count,
                                                  std::uint64_t master_seed,
                                                  unsigned threads = default_threads()) {
  return parallel_map<GWTrajectory>(count, threads, [&](std::size_t i) {
    Engine rng = stream_engine(master_seed, i);
    return simulate_p(dist, horizon, rng);
  });
}

inline std::vector<SpineTrajectory> simulate_q_spine_batch(const OffspringDistribution& dist,
                                                           unsigned horizon, std::size_t count,
                                                           std::uint64_t master_seed,
                                                           unsigned threads = default_threads()) {
  return parallel_map<SpineTrajectory>(count, threads, [&](std::size_t i) {
    Engine rng = stream_engine(master_seed, i);
    return simulate_q_spine(dist, horizon, rng);
  });
}

}  // namespace spinecheck
