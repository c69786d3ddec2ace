#pragma once

// Branching Brownian motion under P and under the spine measure, simulated
// event by event.
//
// Convention: at a branch event the parent is replaced by L children placed at
// its position. The expected population is then exp(r (m - 1) t), and
//
//   Z_lambda(t) = sum_u exp(lambda X_u(t) - lambda^2 t / 2 - r (m - 1) t)
//
// has mean one under P. Under the spine measure the spine diffuses with drift
// lambda, branches at rate r m with size-biased offspring and continues in a
// uniformly chosen child; every other particle follows P.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spinecheck/numeric.hpp"
#include "spinecheck/offspring.hpp"
#include "spinecheck/parallel.hpp"
#include "spinecheck/rng.hpp"

namespace spinecheck {

inline constexpr std::size_t kParticleCap = 1'000'000;
inline constexpr double kMaxGridPoints = 1e5;

class ParticleOverflow : public std::runtime_error {
 public:
  ParticleOverflow(double time, std::size_t count, std::size_t cap)
      : std::runtime_error("particle cap of " + std::to_string(cap) + " exceeded at t=" +
                           std::to_string(time) + " (" + std::to_string(count) +
                           " particles)"),
        time_(time) {}

  [[nodiscard]] double time() const noexcept { return time_; }

 private:
  double time_;
};

struct BBMParams {
  double branch_rate = 1.0;
  double lambda = 0.0;
  OffspringDistribution offspring;
  double horizon = 1.0;
  double time_step = 0.05;
  std::size_t particle_cap = kParticleCap;
  bool record_particles = true;

  [[nodiscard]] double mean_offspring() const noexcept { return offspring.mean(); }
  // r (m - 1), the exponential growth rate of the mean population.
  [[nodiscard]] double growth_rate() const noexcept {
    return branch_rate * (offspring.mean() - 1.0);
  }
};

inline void validate(const BBMParams& params) {
  if (!(params.branch_rate > 0.0) || !std::isfinite(params.branch_rate)) {
    throw std::invalid_argument("branch rate must be positive");
  }
  if (!std::isfinite(params.lambda)) throw std::invalid_argument("lambda must be finite");
  if (!(params.horizon > 0.0) || !std::isfinite(params.horizon)) {
    throw std::invalid_argument("horizon must be positive");
  }
  if (!(params.time_step > 0.0)) throw std::invalid_argument("time step must be positive");
  if (params.horizon / params.time_step > kMaxGridPoints) {
    throw std::invalid_argument("more than 1e5 observation times");
  }
  if (params.particle_cap < 1 || params.particle_cap > kParticleCap) {
    throw std::invalid_argument("particle cap must lie in [1, 1e6]");
  }
}

// 0, dt, 2 dt, ..., horizon (the last step may be shorter).
inline std::vector<double> observation_times(const BBMParams& params) {
  const auto steps = static_cast<std::size_t>(
      std::ceil(params.horizon / params.time_step - 1e-9));
  std::vector<double> times(steps + 1);
  for (std::size_t k = 0; k < steps; ++k) times[k] = static_cast<double>(k) * params.time_step;
  times[steps] = params.horizon;
  return times;
}

struct ParticleRecord {
  std::uint64_t id = 0;
  std::uint64_t parent_id = 0;  // equals id for the root
  double position = 0.0;
  bool is_spine = false;
};

struct BBMPath {
  std::vector<double> times;
  std::vector<std::vector<ParticleRecord>> particles;  // empty unless recorded
  std::vector<std::size_t> counts;
  std::vector<double> z;
  std::size_t branch_events = 0;
};

struct SpineBBMPath : BBMPath {
  std::vector<double> spine_position;
  std::vector<std::uint64_t> spine_id;
};

// One term of Z_lambda(t).
inline double martingale_term(double position, double t, const BBMParams& params) {
  const double lambda = params.lambda;
  return std::exp(lambda * position - 0.5 * lambda * lambda * t - params.growth_rate() * t);
}

inline double additive_martingale(std::span<const ParticleRecord> particles, double t,
                                  const BBMParams& params) {
  CompensatedSum acc;
  for (const ParticleRecord& p : particles) acc += martingale_term(p.position, t, params);
  return acc.value();
}

// Z_lambda at a recorded observation time.
inline double additive_martingale(const BBMPath& path, double t, const BBMParams& params) {
  const auto it = std::find_if(path.times.begin(), path.times.end(),
                               [t](double s) { return std::abs(s - t) <= 1e-9; });
  if (it == path.times.end()) {
    throw std::invalid_argument("t=" + std::to_string(t) + " is not an observation time");
  }
  const auto idx = static_cast<std::size_t>(it - path.times.begin());
  if (path.particles.empty()) return path.z[idx];
  return additive_martingale(path.particles[idx], path.times[idx], params);
}

namespace detail {

template <class Rng>
class BBMSimulator {
 public:
  BBMSimulator(const BBMParams& params, Rng& rng, bool with_spine)
      : params_(params), rng_(rng), spine_law_(params.offspring) {
    validate(params);
    spawn(0, 0.0, 0.0, with_spine, /*self_parent=*/true);
  }

  SpineBBMPath run() {
    SpineBBMPath path;
    path.times = observation_times(params_);
    for (double t : path.times) {
      while (!clock_.empty() && clock_.top().first <= t) branch(path);
      observe(t, path);
    }
    return path;
  }

 private:
  struct Live {
    std::uint64_t id;
    std::uint64_t parent_id;
    double position;
    double last_time;
    bool is_spine;
  };
  using Ring = std::pair<double, std::size_t>;

  void advance(Live& p, double t) {
    const double dt = t - p.last_time;
    if (dt > 0.0) {
      p.position += std::sqrt(dt) * gauss_(rng_) + (p.is_spine ? params_.lambda * dt : 0.0);
      p.last_time = t;
    }
  }

  void spawn(std::uint64_t parent_id, double position, double t, bool is_spine,
             bool self_parent = false) {
    const std::uint64_t id = next_id_++;
    const std::size_t slot = slots_.size();
    slots_.push_back({id, self_parent ? id : parent_id, position, t, is_spine});
    alive_index_.push_back(alive_.size());
    alive_.push_back(slot);
    const double rate = is_spine ? params_.branch_rate * params_.mean_offspring()
                                 : params_.branch_rate;
    clock_.emplace(t + std::exponential_distribution<double>(rate)(rng_), slot);
  }

  void kill(std::size_t slot) {
    const std::size_t pos = alive_index_[slot];
    const std::size_t last = alive_.back();
    alive_[pos] = last;
    alive_index_[last] = pos;
    alive_.pop_back();
  }

  void branch(SpineBBMPath& path) {
    const auto [t, slot] = clock_.top();
    clock_.pop();
    advance(slots_[slot], t);
    const Live parent = slots_[slot];
    kill(slot);
    ++path.branch_events;
    const std::uint32_t kids =
        parent.is_spine ? spine_law_.sample(rng_) : params_.offspring.sample(rng_);
    const std::uint32_t spine_pick =
        parent.is_spine ? std::uniform_int_distribution<std::uint32_t>(0, kids - 1)(rng_)
                        : std::numeric_limits<std::uint32_t>::max();
    for (std::uint32_t c = 0; c < kids; ++c) {
      spawn(parent.id, parent.position, t, parent.is_spine && c == spine_pick);
    }
    if (alive_.size() > params_.particle_cap) {
      throw ParticleOverflow(t, alive_.size(), params_.particle_cap);
    }
  }

  void observe(double t, SpineBBMPath& path) {
    std::vector<ParticleRecord> snapshot;
    snapshot.reserve(alive_.size());
    for (std::size_t slot : alive_) {
      Live& p = slots_[slot];
      advance(p, t);
      snapshot.push_back({p.id, p.parent_id, p.position, p.is_spine});
    }
    std::sort(snapshot.begin(), snapshot.end(),
              [](const ParticleRecord& a, const ParticleRecord& b) { return a.id < b.id; });
    path.counts.push_back(snapshot.size());
    path.z.push_back(additive_martingale(snapshot, t, params_));
    const auto spine = std::find_if(snapshot.begin(), snapshot.end(),
                                    [](const ParticleRecord& p) { return p.is_spine; });
    if (spine != snapshot.end()) {
      path.spine_position.push_back(spine->position);
      path.spine_id.push_back(spine->id);
    }
    if (params_.record_particles) path.particles.push_back(std::move(snapshot));
  }

  const BBMParams& params_;
  Rng& rng_;
  SizeBiasedDistribution spine_law_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
  std::vector<Live> slots_;
  std::vector<std::size_t> alive_;
  std::vector<std::size_t> alive_index_;  // by slot; stale once the slot is dead
  std::priority_queue<Ring, std::vector<Ring>, std::greater<Ring>> clock_;
  std::uint64_t next_id_ = 0;
};

}  // namespace detail

template <class Rng>
BBMPath simulate_bbm_p(const BBMParams& params, Rng& rng) {
  SpineBBMPath path = detail::BBMSimulator<Rng>(params, rng, false).run();
  return static_cast<BBMPath&&>(std::move(path));
}

inline BBMPath simulate_bbm_p(const BBMParams& params, std::uint64_t seed) {
  Engine rng{seed};
  return simulate_bbm_p(params, rng);
}

template <class Rng>
SpineBBMPath simulate_bbm_spine(const BBMParams& params, Rng& rng) {
  return detail::BBMSimulator<Rng>(params, rng, true).run();
}

inline SpineBBMPath simulate_bbm_spine(const BBMParams& params, std::uint64_t seed) {
  Engine rng{seed};
  return simulate_bbm_spine(params, rng);
}

// exp(-lambda (xi_s - lambda s) - lambda^2 s / 2), a mean-one martingale of the
// drifted spine.
inline double spine_exponential(double spine_position, double s, const BBMParams& params) {
  const double lambda = params.lambda;
  return std::exp(-lambda * (spine_position - lambda * s) - 0.5 * lambda * lambda * s);
}

// C(t) in 1/Z(s) <= C(t) * spine_exponential(xi_s, s) for all s <= t. Keeping
// only the spine term of Z gives exactly exp(r (m - 1) s) * spine_exponential;
// C(t) = exp(max(0, r (m - 1) + lambda^2) t) dominates that factor on [0, t].
inline double spine_bound_constant(const BBMParams& params, double t) {
  const double rate = params.growth_rate() + params.lambda * params.lambda;
  return std::exp(std::max(rate, 0.0) * t);
}

struct StoppedValue {
  double level = 0.0;
  double time = 0.0;  // first observation time with xi >= level, else the horizon
  double inverse_z = 0.0;
  double bound = 0.0;
};

struct SpineBoundReport {
  std::size_t checks = 0;
  std::size_t violations = 0;
  double constant = 0.0;
  // (1/Z(s)) / (exp(r(m-1) s) M_s), i.e. spine term over Z: at most 1, and
  // exactly 1 when the spine is the only particle.
  double max_ratio = 0.0;
  double min_ratio = std::numeric_limits<double>::infinity();
  std::vector<double> ratios;
  std::vector<StoppedValue> stopped;
};

inline constexpr double kBoundRelativeSlack = 1e-12;

inline SpineBoundReport spine_bound_check(const SpineBBMPath& path, const BBMParams& params,
                                          std::span<const double> passage_levels = {}) {
  if (path.spine_position.size() != path.times.size()) {
    throw std::invalid_argument("path carries no spine");
  }
  SpineBoundReport report;
  const double horizon = path.times.back();
  report.constant = spine_bound_constant(params, horizon);
  const double rate = params.growth_rate();
  auto bound_at = [&](std::size_t i) {
    return report.constant * spine_exponential(path.spine_position[i], path.times[i], params);
  };
  for (std::size_t i = 0; i < path.times.size(); ++i) {
    const double s = path.times[i];
    const double inverse_z = 1.0 / path.z[i];
    ++report.checks;
    if (inverse_z > bound_at(i) * (1.0 + kBoundRelativeSlack)) ++report.violations;
    const double tight = std::exp(rate * s) * spine_exponential(path.spine_position[i], s, params);
    const double ratio = inverse_z / tight;
    report.ratios.push_back(ratio);
    report.max_ratio = std::max(report.max_ratio, ratio);
    report.min_ratio = std::min(report.min_ratio, ratio);
  }
  for (double level : passage_levels) {
    std::size_t hit = path.times.size() - 1;
    for (std::size_t i = 0; i < path.times.size(); ++i) {
      if (path.spine_position[i] >= level) {
        hit = i;
        break;
      }
    }
    StoppedValue sv{level, path.times[hit], 1.0 / path.z[hit], bound_at(hit)};
    ++report.checks;
    if (sv.inverse_z > sv.bound * (1.0 + kBoundRelativeSlack)) ++report.violations;
    report.stopped.push_back(sv);
  }
  return report;
}

// Per-path summaries for batch runs; path i uses stream_engine(master_seed, i).
struct BBMSummary {
  std::vector<double> z;
  std::vector<std::size_t> counts;
};

struct SpineBBMSummary {
  std::vector<double> z;
  std::vector<double> spine_position;
  SpineBoundReport bound;
};

inline std::vector<BBMSummary> simulate_bbm_p_batch(BBMParams params, std::size_t count,
                                                    std::uint64_t master_seed,
                                                    unsigned threads = default_threads()) {
  params.record_particles = false;
  return parallel_map<BBMSummary>(count, threads, [&](std::size_t i) {
    Engine rng = stream_engine(master_seed, i);
    BBMPath path = simulate_bbm_p(params, rng);
    return BBMSummary{std::move(path.z), std::move(path.counts)};
  });
}

inline std::vector<SpineBBMSummary> simulate_bbm_spine_batch(
    BBMParams params, std::size_t count, std::uint64_t master_seed,
    std::span<const double> passage_levels = {}, unsigned threads = default_threads()) {
  params.record_particles = false;
  return parallel_map<SpineBBMSummary>(count, threads, [&](std::size_t i) {
    Engine rng = stream_engine(master_seed, i);
    SpineBBMPath path = simulate_bbm_spine(params, rng);
    SpineBoundReport bound = spine_bound_check(path, params, passage_levels);
    bound.ratios.clear();
    return SpineBBMSummary{std::move(path.z), std::move(path.spine_position), std::move(bound)};
  });
}

}  // namespace spinecheck
