#pragma once

// Monte Carlo summaries, two-sided comparisons, trend verdicts and
// uniform-integrability tail profiles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spinecheck/numeric.hpp"

namespace spinecheck {

struct MCEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  std::pair<double, double> ci95{0.0, 0.0};
};

inline MCEstimate mc_estimate(std::span<const double> samples) {
  if (samples.size() < 2) throw std::invalid_argument("need at least two samples");
  const double n = static_cast<double>(samples.size());
  const double mean = compensated_sum(samples) / n;
  CompensatedSum squares;
  for (double x : samples) squares += (x - mean) * (x - mean);
  const double variance = squares.value() / (n - 1.0);
  MCEstimate est;
  est.mean = mean;
  est.std_error = std::sqrt(variance / n);
  est.n_samples = samples.size();
  est.ci95 = {mean - 1.96 * est.std_error, mean + 1.96 * est.std_error};
  return est;
}

struct Verdict {
  bool pass = false;
  double z_score = 0.0;  // signed, (a - b) / combined stderr
  double abs_diff = 0.0;
  double combined_stderr = 0.0;
};

inline constexpr double kTwoSidedSigmas = 3.0;

// Passes when |a - b| <= sigmas * combined stderr.
inline Verdict compare_two_sided(const MCEstimate& a, double exact,
                                 double sigmas = kTwoSidedSigmas) {
  Verdict v;
  v.abs_diff = std::abs(a.mean - exact);
  v.combined_stderr = a.std_error;
  v.z_score = v.combined_stderr > 0.0 ? (a.mean - exact) / v.combined_stderr
                                      : (v.abs_diff == 0.0 ? 0.0 : HUGE_VAL);
  v.pass = v.abs_diff <= sigmas * v.combined_stderr;
  return v;
}

inline Verdict compare_two_sided(const MCEstimate& a, const MCEstimate& b,
                                 double sigmas = kTwoSidedSigmas) {
  Verdict v;
  v.abs_diff = std::abs(a.mean - b.mean);
  v.combined_stderr = std::hypot(a.std_error, b.std_error);
  v.z_score = v.combined_stderr > 0.0 ? (a.mean - b.mean) / v.combined_stderr
                                      : (v.abs_diff == 0.0 ? 0.0 : HUGE_VAL);
  v.pass = v.abs_diff <= sigmas * v.combined_stderr;
  return v;
}

struct TrendVerdict {
  bool non_increasing = false;
  std::size_t first_violation = 0;  // index i with a[i+1] above a[i] (+ slack)
  double worst_excess = 0.0;
};

// Exact sequences: a[i+1] <= a[i] with no slack.
inline TrendVerdict supermartingale_trend(std::span<const double> values) {
  TrendVerdict v{true, 0, 0.0};
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    const double excess = values[i + 1] - values[i];
    if (excess > 0.0) {
      if (v.non_increasing) v.first_violation = i;
      v.non_increasing = false;
      v.worst_excess = std::max(v.worst_excess, excess);
    }
  }
  return v;
}

// Monte Carlo sequences: a[i+1] <= a[i] + sigmas * combined stderr.
inline TrendVerdict supermartingale_trend(std::span<const MCEstimate> values,
                                          double sigmas = kTwoSidedSigmas) {
  TrendVerdict v{true, 0, 0.0};
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    const double slack = sigmas * std::hypot(values[i].std_error, values[i + 1].std_error);
    const double excess = values[i + 1].mean - values[i].mean - slack;
    if (excess > 0.0) {
      if (v.non_increasing) v.first_violation = i;
      v.non_increasing = false;
      v.worst_excess = std::max(v.worst_excess, excess);
    }
  }
  return v;
}

inline constexpr std::size_t kMinFamilySamples = 1000;

struct UITailProfile {
  std::vector<double> thresholds;
  // rows[i][k] = E[V_i; V_i > thresholds[k]] for family i.
  std::vector<std::vector<double>> rows;
  std::vector<MCEstimate> family_means;
  std::vector<double> sup_row;  // max over families, per threshold
  double tolerance = 0.0;
  bool ui_consistent = false;
};

// Falsification diagnostic only: finitely many samples can refute uniform
// integrability but never establish it.
inline UITailProfile ui_tail_profile(const std::vector<std::vector<double>>& families,
                                     std::vector<double> thresholds,
                                     double tolerance = 1e-2) {
  if (families.empty()) throw std::invalid_argument("no sample families");
  if (thresholds.empty()) throw std::invalid_argument("no thresholds");
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    if (!(thresholds[k] > 0.0) || (k > 0 && !(thresholds[k] > thresholds[k - 1]))) {
      throw std::invalid_argument("thresholds must be positive and strictly increasing");
    }
  }
  UITailProfile profile;
  profile.thresholds = std::move(thresholds);
  profile.tolerance = tolerance;
  profile.sup_row.assign(profile.thresholds.size(), 0.0);
  for (std::size_t i = 0; i < families.size(); ++i) {
    const auto& family = families[i];
    if (family.empty()) {
      throw std::invalid_argument("sample family " + std::to_string(i) + " is empty");
    }
    if (family.size() < kMinFamilySamples) {
      throw std::invalid_argument("sample family " + std::to_string(i) + " has " +
                                  std::to_string(family.size()) + " samples, need " +
                                  std::to_string(kMinFamilySamples));
    }
    std::vector<double> row;
    row.reserve(profile.thresholds.size());
    for (std::size_t k = 0; k < profile.thresholds.size(); ++k) {
      CompensatedSum tail;
      for (double v : family) {
        if (v > profile.thresholds[k]) tail += v;
      }
      row.push_back(tail.value() / static_cast<double>(family.size()));
      profile.sup_row[k] = std::max(profile.sup_row[k], row.back());
    }
    profile.rows.push_back(std::move(row));
    profile.family_means.push_back(mc_estimate(family));
  }
  profile.ui_consistent = profile.sup_row.back() <= tolerance;
  return profile;
}

}  // namespace spinecheck
