#pragma once

// Exact finite-horizon laws of the generation sizes under P and Q, and exact
// checks of the identities relating the two measures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "spinecheck/numeric.hpp"
#include "spinecheck/offspring.hpp"

namespace spinecheck {

inline constexpr unsigned kExactMaxGeneration = 8;
inline constexpr std::uint64_t kExactMaxSupport = 1'000'000;
inline constexpr double kPruneBelow = 1e-16;
inline constexpr double kPrunedMassLimit = 1e-12;

class SupportExplosion : public std::length_error {
 public:
  SupportExplosion(unsigned n, const std::string& why)
      : std::length_error("exact law refused at generation " + std::to_string(n) + ": " + why),
        generation_(n) {}

  [[nodiscard]] unsigned generation() const noexcept { return generation_; }

 private:
  unsigned generation_;
};

class TruncationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExactLaw {
  std::map<std::uint64_t, double> atoms;
  double pruned_mass = 0.0;

  [[nodiscard]] double mass(std::uint64_t j) const {
    const auto it = atoms.find(j);
    return it == atoms.end() ? 0.0 : it->second;
  }

  [[nodiscard]] double total() const {
    CompensatedSum acc;
    for (const auto& [j, p] : atoms) acc += p;
    return acc.value();
  }

  [[nodiscard]] double mean() const {
    CompensatedSum acc;
    for (const auto& [j, p] : atoms) acc += static_cast<double>(j) * p;
    return acc.value();
  }
};

namespace detail {

// Dense pmf on {0, .., size-1} with the nonzero range tracked.
struct DensePmf {
  std::vector<double> p;
  std::size_t lo = 0;
  std::size_t hi = 0;  // one past the last nonzero
};

inline DensePmf convolve(const DensePmf& a, std::span<const Atom> atoms) {
  DensePmf out;
  if (a.lo >= a.hi) return out;
  const std::size_t kmax = atoms.back().k;
  out.p.assign(a.hi - 1 + kmax + 1, 0.0);
  for (std::size_t i = a.lo; i < a.hi; ++i) {
    const double pi = a.p[i];
    if (pi == 0.0) continue;
    for (const Atom& at : atoms) out.p[i + at.k] += pi * at.p;
  }
  out.lo = a.lo + atoms.front().k;
  out.hi = a.hi - 1 + kmax + 1;
  return out;
}

// Checks ancestors * kmax^n against the support limit for every generation up
// to n and returns the projected maximum population.
inline std::uint64_t projected_support(std::uint64_t ancestors, std::uint32_t kmax,
                                       unsigned n) {
  if (n > kExactMaxGeneration) {
    throw SupportExplosion(n, "more than " + std::to_string(kExactMaxGeneration) +
                                  " generations");
  }
  std::uint64_t size = ancestors;
  for (unsigned g = 1; g <= n; ++g) {
    size *= std::max<std::uint32_t>(kmax, 1);
    if (size + 1 > kExactMaxSupport) {
      throw SupportExplosion(g, "projected support exceeds " + std::to_string(kExactMaxSupport));
    }
  }
  if (size + 1 > kExactMaxSupport) {
    throw SupportExplosion(0, "projected support exceeds " + std::to_string(kExactMaxSupport));
  }
  return size;
}

// One generation step: next = sum_k law[k] * (first^{*1} * rest^{*(k-1)}) when
// `first` is given, otherwise sum_k law[k] * rest^{*k}.
inline std::vector<double> step_law(const std::vector<double>& law,
                                    std::span<const Atom> rest,
                                    std::span<const Atom> first) {
  const std::size_t kmax = std::max(rest.back().k, first.empty() ? 0u : first.back().k);
  std::vector<double> next((law.size() - 1) * kmax + 1, 0.0);
  DensePmf power;
  power.p = {1.0};
  power.lo = 0;
  power.hi = 1;
  std::size_t k0 = 0;
  if (!first.empty()) {
    power = convolve(power, first);
    k0 = 1;
  }
  for (std::size_t k = k0; k < law.size(); ++k) {
    if (k > k0) power = convolve(power, rest);
    const double w = law[k];
    if (w == 0.0) continue;
    for (std::size_t j = power.lo; j < power.hi; ++j) next[j] += w * power.p[j];
  }
  return next;
}

inline void prune(std::vector<double>& law, double& pruned) {
  for (double& p : law) {
    if (p != 0.0 && p < kPruneBelow) {
      pruned += p;
      p = 0.0;
    }
  }
  if (pruned > kPrunedMassLimit) {
    throw TruncationError("pruned mass " + std::to_string(pruned) + " exceeds " +
                          std::to_string(kPrunedMassLimit));
  }
}

inline ExactLaw to_exact_law(const std::vector<double>& law, double pruned) {
  ExactLaw out;
  out.pruned_mass = pruned;
  for (std::size_t j = 0; j < law.size(); ++j) {
    if (law[j] != 0.0) out.atoms.emplace(j, law[j]);
  }
  return out;
}

}  // namespace detail

// Law of X_n started from `ancestors` individuals, by iterated convolution.
inline ExactLaw exact_law_p(const OffspringDistribution& dist, unsigned n,
                            std::uint64_t ancestors = 1) {
  if (ancestors < 1) throw std::invalid_argument("need at least one ancestor");
  detail::projected_support(ancestors, dist.max_k(), n);
  std::vector<double> law(ancestors + 1, 0.0);
  law[ancestors] = 1.0;
  double pruned = 0.0;
  for (unsigned g = 1; g <= n; ++g) {
    law = detail::step_law(law, dist.atoms(), {});
    detail::prune(law, pruned);
  }
  ExactLaw out = detail::to_exact_law(law, pruned);
  const double expected_mean =
      static_cast<double>(ancestors) * std::pow(dist.mean(), static_cast<double>(n));
  if (std::abs(out.mean() - expected_mean) > 1e-9 * expected_mean) {
    throw std::logic_error("exact law mean " + std::to_string(out.mean()) +
                           " disagrees with ancestors * m^n = " + std::to_string(expected_mean));
  }
  return out;
}

// Q(X_n = j) = (j / m^n) P(X_n = j).
inline ExactLaw exact_law_q(const OffspringDistribution& dist, unsigned n) {
  const ExactLaw p_law = exact_law_p(dist, n, 1);
  const double scale = std::pow(dist.mean(), static_cast<double>(n));
  ExactLaw out;
  out.pruned_mass = p_law.pruned_mass;
  for (const auto& [j, p] : p_law.atoms) {
    if (j > 0) out.atoms.emplace(j, static_cast<double>(j) * p / scale);
  }
  return out;
}

// The Q-law again, but from the spine recursion: one individual reproduces by
// the size-biased law and the remaining k-1 by the original law. Shares no
// arithmetic with exact_law_q beyond the convolution kernel.
inline ExactLaw exact_law_q_spine(const OffspringDistribution& dist, unsigned n) {
  detail::projected_support(1, dist.max_k(), n);
  const SizeBiasedDistribution spine = size_bias(dist);
  std::vector<double> law{0.0, 1.0};
  double pruned = 0.0;
  for (unsigned g = 1; g <= n; ++g) {
    law = detail::step_law(law, dist.atoms(), spine.atoms());
    detail::prune(law, pruned);
  }
  return detail::to_exact_law(law, pruned);
}

// sum_j (m^n / j) Q(X_n = j) for a given Q-law.
inline double q_inverse_z(const ExactLaw& q_law, double m, unsigned n) {
  const double scale = std::pow(m, static_cast<double>(n));
  CompensatedSum acc;
  for (const auto& [j, q] : q_law.atoms) {
    if (j > 0) acc += scale / static_cast<double>(j) * q;
  }
  return acc.value();
}

// Q[1/Z_n]; throws std::logic_error unless it equals P(X_n > 0) within 1e-10.
inline double exact_q_inverse_z(const OffspringDistribution& dist, unsigned n) {
  const double value = q_inverse_z(exact_law_q(dist, n), dist.mean(), n);
  const double survival = survival_after_n(dist, n);
  if (std::abs(value - survival) > 1e-10) {
    throw std::logic_error("Q[1/Z_" + std::to_string(n) + "] = " + std::to_string(value) +
                           " but P(X_n > 0) = " + std::to_string(survival));
  }
  return value;
}

struct AtomComparison {
  std::uint64_t atom = 0;
  double lhs = 0.0;
  double rhs = 0.0;
};

struct OracleReport {
  std::string check;
  std::map<std::string, double> parameters;
  double max_abs_deviation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::vector<AtomComparison> atoms;
  double tower_deviation = 0.0;  // only for the conditional check
};

// For each k with Q(X_n = k) > 0 compares
//   Q[1/Z_{n+s} | X_n = k]      (from the joint Q-law of (X_n, X_{n+s}))
//   (m^n / k) * (1 - f^(s)(0)^k) (conditional survival, from the pgf)
// and checks the tower property against Q[1/Z_{n+s}].
inline OracleReport check_supermartingale_identity(const OffspringDistribution& dist,
                                                   unsigned n, unsigned s,
                                                   double tolerance = 1e-10) {
  if (n + s > kExactMaxGeneration) {
    throw SupportExplosion(n + s, "more than " + std::to_string(kExactMaxGeneration) +
                                      " generations");
  }
  const double m = dist.mean();
  const double scale_n = std::pow(m, static_cast<double>(n));
  const double scale_ns = std::pow(m, static_cast<double>(n + s));
  const ExactLaw p_n = exact_law_p(dist, n, 1);
  const ExactLaw q_n = exact_law_q(dist, n);
  const double extinct_by_s = pgf_iterate(dist, s, 0.0);

  OracleReport report;
  report.check = "supermartingale_identity";
  report.parameters = {{"n", n}, {"s", s}, {"m", m}};
  report.tolerance = tolerance;
  CompensatedSum tower;
  for (const auto& [k, qk] : q_n.atoms) {
    const ExactLaw forward = exact_law_p(dist, s, k);
    CompensatedSum weighted;
    for (const auto& [j, pj] : forward.atoms) {
      if (j == 0) continue;
      const double joint_q = static_cast<double>(j) / scale_ns * p_n.mass(k) * pj;
      weighted += scale_ns / static_cast<double>(j) * joint_q;
    }
    const double lhs = weighted.value() / qk;
    const double rhs =
        scale_n / static_cast<double>(k) * (1.0 - std::pow(extinct_by_s, static_cast<double>(k)));
    report.atoms.push_back({k, lhs, rhs});
    report.max_abs_deviation = std::max(report.max_abs_deviation, std::abs(lhs - rhs));
    tower += qk * lhs;
  }
  report.tower_deviation = std::abs(tower.value() - exact_q_inverse_z(dist, n + s));
  report.pass = report.max_abs_deviation <= tolerance && report.tower_deviation <= tolerance;
  return report;
}

// For every atom A = {X_n = j} compares Q(A), realised by the spine recursion,
// with E_P[Z_n 1_A] = (j / m^n) P(X_n = j).
inline OracleReport check_change_of_measure(const OffspringDistribution& dist, unsigned n,
                                            double tolerance = 1e-12) {
  const ExactLaw p_law = exact_law_p(dist, n, 1);
  const ExactLaw q_law = exact_law_q_spine(dist, n);
  const double scale = std::pow(dist.mean(), static_cast<double>(n));

  OracleReport report;
  report.check = "change_of_measure";
  report.parameters = {{"n", n}, {"m", dist.mean()}};
  report.tolerance = tolerance;
  std::map<std::uint64_t, bool> support;
  for (const auto& [j, p] : p_law.atoms) support[j] = true;
  for (const auto& [j, q] : q_law.atoms) support[j] = true;
  for (const auto& [j, unused] : support) {
    const double q_of_a = q_law.mass(j);
    const double weighted_p = static_cast<double>(j) / scale * p_law.mass(j);
    report.atoms.push_back({j, q_of_a, weighted_p});
    report.max_abs_deviation = std::max(report.max_abs_deviation, std::abs(q_of_a - weighted_p));
  }
  report.pass = report.max_abs_deviation <= tolerance;
  return report;
}

}  // namespace spinecheck
