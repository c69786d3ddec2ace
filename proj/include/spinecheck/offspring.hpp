#pragma once

// Finite-support offspring laws, their generating functions, extinction
// probabilities and the size-biased law used for the spine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spinecheck/numeric.hpp"

namespace spinecheck {

inline constexpr std::uint32_t kMaxOffspring = 64;

struct Atom {
  std::uint32_t k = 0;
  double p = 0.0;

  friend bool operator==(const Atom&, const Atom&) = default;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Inverse-CDF sampler over a short sorted atom list.
class AtomSampler {
 public:
  AtomSampler() = default;
  explicit AtomSampler(std::span<const Atom> atoms) {
    CompensatedSum acc;
    values_.reserve(atoms.size());
    cdf_.reserve(atoms.size());
    for (const Atom& a : atoms) {
      if (a.p <= 0.0) continue;
      acc += a.p;
      values_.push_back(a.k);
      cdf_.push_back(acc.value());
    }
    if (!cdf_.empty()) cdf_.back() = 1.0;
  }

  template <class Rng>
  std::uint32_t operator()(Rng& rng) const {
    if (values_.size() == 1) return values_.front();
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto idx = std::min<std::size_t>(it - cdf_.begin(), values_.size() - 1);
    return values_[idx];
  }

 private:
  std::vector<std::uint32_t> values_;
  std::vector<double> cdf_;
};

}  // namespace detail

class OffspringDistribution {
 public:
  // Validates and normalises `entries`. Throws std::invalid_argument on an
  // empty list, duplicate or oversized k, negative or non-finite mass, a total
  // mass more than 1e-9 away from 1, or a zero mean.
  static OffspringDistribution make(std::span<const Atom> entries) {
    if (entries.empty()) throw std::invalid_argument("offspring law has no entries");
    std::vector<Atom> atoms(entries.begin(), entries.end());
    std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.k < b.k; });
    CompensatedSum total;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      const Atom& a = atoms[i];
      if (a.k > kMaxOffspring) {
        throw std::invalid_argument("offspring count " + std::to_string(a.k) +
                                    " exceeds the support cap of " +
                                    std::to_string(kMaxOffspring));
      }
      if (i > 0 && atoms[i - 1].k == a.k) {
        throw std::invalid_argument("duplicate offspring count " + std::to_string(a.k));
      }
      if (!std::isfinite(a.p) || a.p < 0.0) {
        throw std::invalid_argument("probability of k=" + std::to_string(a.k) +
                                    " is negative or not finite");
      }
      total += a.p;
    }
    const double sum = total.value();
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument("offspring probabilities sum to " + std::to_string(sum) +
                                  ", not 1");
    }
    CompensatedSum mean;
    for (Atom& a : atoms) {
      a.p /= sum;
      mean += a.k * a.p;
    }
    if (!(mean.value() > 0.0)) throw std::invalid_argument("offspring law has zero mean");
    return OffspringDistribution(std::move(atoms), mean.value());
  }

  static OffspringDistribution make(std::initializer_list<Atom> entries) {
    return make(std::span<const Atom>(entries.begin(), entries.size()));
  }

  [[nodiscard]] std::span<const Atom> atoms() const noexcept { return atoms_; }
  [[nodiscard]] double mean() const noexcept { return mean_; }
  [[nodiscard]] std::uint32_t max_k() const noexcept { return atoms_.back().k; }

  [[nodiscard]] double mass(std::uint32_t k) const noexcept {
    for (const Atom& a : atoms_) {
      if (a.k == k) return a.p;
    }
    return 0.0;
  }

  template <class Rng>
  std::uint32_t sample(Rng& rng) const {
    return sampler_(rng);
  }

 private:
  OffspringDistribution(std::vector<Atom> atoms, double mean)
      : atoms_(std::move(atoms)), mean_(mean), sampler_(atoms_) {}

  std::vector<Atom> atoms_;
  double mean_;
  detail::AtomSampler sampler_;
};

inline OffspringDistribution make_offspring(std::span<const Atom> entries) {
  return OffspringDistribution::make(entries);
}

// P(L=2) = p, P(L=0) = 1 - p.
inline OffspringDistribution binary_offspring(double p) {
  return OffspringDistribution::make({{0, 1.0 - p}, {2, p}});
}

// Law of the spine's offspring count: k p_k / m on k >= 1.
class SizeBiasedDistribution {
 public:
  explicit SizeBiasedDistribution(const OffspringDistribution& source) {
    for (const Atom& a : source.atoms()) {
      if (a.k == 0 || a.p == 0.0) continue;
      atoms_.push_back({a.k, a.k * a.p / source.mean()});
    }
    sampler_ = detail::AtomSampler(atoms_);
  }

  [[nodiscard]] std::span<const Atom> atoms() const noexcept { return atoms_; }

  [[nodiscard]] double mass(std::uint32_t k) const noexcept {
    for (const Atom& a : atoms_) {
      if (a.k == k) return a.p;
    }
    return 0.0;
  }

  [[nodiscard]] double mean() const noexcept {
    CompensatedSum acc;
    for (const Atom& a : atoms_) acc += a.k * a.p;
    return acc.value();
  }

  template <class Rng>
  std::uint32_t sample(Rng& rng) const {
    return sampler_(rng);
  }

 private:
  std::vector<Atom> atoms_;
  detail::AtomSampler sampler_;
};

inline SizeBiasedDistribution size_bias(const OffspringDistribution& dist) {
  return SizeBiasedDistribution(dist);
}

// f(s) = sum_k p_k s^k on [0, 1].
inline double pgf_eval(const OffspringDistribution& dist, double s) {
  if (!(s >= 0.0 && s <= 1.0)) {
    throw std::domain_error("pgf argument " + std::to_string(s) + " outside [0, 1]");
  }
  CompensatedSum acc;
  for (const Atom& a : dist.atoms()) acc += a.p * std::pow(s, static_cast<double>(a.k));
  return std::clamp(acc.value(), 0.0, 1.0);
}

// f'(s).
inline double pgf_derivative(const OffspringDistribution& dist, double s) {
  if (!(s >= 0.0 && s <= 1.0)) {
    throw std::domain_error("pgf argument " + std::to_string(s) + " outside [0, 1]");
  }
  CompensatedSum acc;
  for (const Atom& a : dist.atoms()) {
    if (a.k > 0) acc += a.k * a.p * std::pow(s, static_cast<double>(a.k - 1));
  }
  return acc.value();
}

// f^(n)(s), the n-fold composition.
inline double pgf_iterate(const OffspringDistribution& dist, unsigned n, double s) {
  for (unsigned i = 0; i < n; ++i) s = pgf_eval(dist, s);
  return s;
}

// P(X_n > 0) = 1 - f^(n)(0) for a single ancestor.
inline double survival_after_n(const OffspringDistribution& dist, unsigned n) {
  return 1.0 - pgf_iterate(dist, n, 0.0);
}

inline constexpr unsigned long kExtinctionIterationCap = 10'000'000;

// Smallest fixed point of f on [0, 1], by monotone iteration from 0.
inline double extinction_probability(const OffspringDistribution& dist, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
  // Iteration converges only algebraically at criticality.
  if (dist.mean() <= 1.0 && dist.mass(1) < 1.0) return 1.0;
  double q = 0.0;
  for (unsigned long i = 0; i < kExtinctionIterationCap; ++i) {
    const double next = pgf_eval(dist, q);
    if (std::abs(next - q) <= tol) return next;
    q = next;
  }
  throw ConvergenceError("extinction probability did not converge within " +
                         std::to_string(kExtinctionIterationCap) + " iterations");
}

}  // namespace spinecheck
