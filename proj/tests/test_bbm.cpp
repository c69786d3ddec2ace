#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "spinecheck/bbm.hpp"
#include "spinecheck/report.hpp"
#include "spinecheck/stats.hpp"

using namespace spinecheck;

namespace {

BBMParams params_for(OffspringDistribution law, double lambda, double horizon,
                     double rate = 1.0) {
  return BBMParams{.branch_rate = rate,
                   .lambda = lambda,
                   .offspring = std::move(law),
                   .horizon = horizon,
                   .time_step = 0.05};
}

}  // namespace

TEST(BBMParams, Validation) {
  auto p = params_for(binary_offspring(0.6), 0.5, 2.0);
  EXPECT_NO_THROW(validate(p));
  p.time_step = 1e-6;
  EXPECT_THROW(validate(p), std::invalid_argument);
  p = params_for(binary_offspring(0.6), 0.5, 2.0, 0.0);
  EXPECT_THROW(validate(p), std::invalid_argument);
  p = params_for(binary_offspring(0.6), 0.5, -1.0);
  EXPECT_THROW(validate(p), std::invalid_argument);
  p = params_for(binary_offspring(0.6), 0.5, 1.0);
  p.particle_cap = 2'000'000;
  EXPECT_THROW(validate(p), std::invalid_argument);
}

TEST(BBMParams, ObservationGrid) {
  auto p = params_for(binary_offspring(0.6), 0.5, 1.0);
  p.time_step = 0.3;
  const auto t = observation_times(p);
  ASSERT_EQ(t.size(), 5u);
  EXPECT_DOUBLE_EQ(t[3], 0.8999999999999999);
  EXPECT_DOUBLE_EQ(t.back(), 1.0);
  p.time_step = 0.25;
  EXPECT_EQ(observation_times(p).size(), 5u);
}

TEST(AdditiveMartingale, SingleTerms) {
  const auto p = params_for(binary_offspring(0.6), 0.5, 2.0);
  const std::vector<ParticleRecord> root{{0, 0, 0.0, false}};
  EXPECT_DOUBLE_EQ(additive_martingale(root, 0.0, p), 1.0);
  const std::vector<ParticleRecord> one{{0, 0, 0.7, false}};
  // exp(lambda x - lambda^2 t / 2 - r (m - 1) t)
  EXPECT_NEAR(additive_martingale(one, 1.5, p),
              std::exp(0.5 * 0.7 - 0.125 * 1.5 - 0.2 * 1.5), 1e-15);
}

TEST(SimulateBBM, SingleChildLawKeepsOneParticle) {
  auto p = params_for(OffspringDistribution::make({{1, 1.0}}), 0.8, 2.0);
  const auto path = simulate_bbm_p(p, std::uint64_t{3});
  ASSERT_EQ(path.times.size(), 41u);
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    ASSERT_EQ(path.counts[k], 1u);
    const double x = path.particles[k][0].position;
    EXPECT_NEAR(path.z[k], std::exp(0.8 * x - 0.32 * path.times[k]), 1e-12);
    EXPECT_NEAR(additive_martingale(path, path.times[k], p), path.z[k], 1e-15);
  }
  EXPECT_GT(path.branch_events, 0u);
  EXPECT_THROW(additive_martingale(path, 0.01, p), std::invalid_argument);
}

TEST(SimulateBBM, DeterministicGivenSeed) {
  const auto p = params_for(binary_offspring(0.6), 0.5, 2.0);
  const auto a = simulate_bbm_spine(p, std::uint64_t{11});
  const auto b = simulate_bbm_spine(p, std::uint64_t{11});
  EXPECT_EQ(a.z, b.z);
  EXPECT_EQ(a.spine_position, b.spine_position);
  EXPECT_EQ(a.counts, b.counts);
}

TEST(SimulateBBM, RecordsGenealogy) {
  const auto p = params_for(OffspringDistribution::make({{2, 1.0}}), 0.0, 1.0);
  const auto path = simulate_bbm_p(p, std::uint64_t{5});
  std::ostringstream csv;
  write_path_csv(csv, path);
  const std::string text = csv.str();
  EXPECT_EQ(text.rfind("time,particle_id,parent_id,position,is_spine\n", 0), 0u);
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    for (const auto& rec : path.particles[k]) {
      if (rec.id != 0) { EXPECT_LT(rec.parent_id, rec.id); }
    }
    if (k > 0) { EXPECT_GE(path.counts[k], path.counts[k - 1]); }  // no deaths with L = 2
  }
}

TEST(SimulateBBM, ParticleCapOverflow) {
  auto p = params_for(OffspringDistribution::make({{2, 1.0}}), 0.0, 20.0);
  p.particle_cap = 500;
  try {
    simulate_bbm_p(p, std::uint64_t{1});
    FAIL() << "expected overflow";
  } catch (const ParticleOverflow& e) {
    EXPECT_GT(e.time(), 0.0);
    EXPECT_LT(e.time(), 20.0);
  }
}

TEST(SpineBBM, SpineAlwaysAliveAndBoundHolds) {
  const auto p = params_for(binary_offspring(0.6), 0.5, 2.0);
  const std::vector<double> levels{0.5, 1.0};
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto path = simulate_bbm_spine(p, seed);
    ASSERT_EQ(path.spine_position.size(), path.times.size());
    const auto report = spine_bound_check(path, p, levels);
    EXPECT_EQ(report.violations, 0u);
    EXPECT_LE(report.max_ratio, 1.0 + 1e-12);
    ASSERT_EQ(report.stopped.size(), 2u);
    for (std::size_t k = 0; k < path.times.size(); ++k) {
      std::size_t spines = 0;
      for (const auto& rec : path.particles[k]) spines += rec.is_spine;
      EXPECT_EQ(spines, 1u);
      if (path.counts[k] >= 2) { EXPECT_LT(report.ratios[k], 1.0); }
    }
    for (const auto& sv : report.stopped) {
      EXPECT_LE(sv.time, 2.0);
      EXPECT_LE(sv.inverse_z, sv.bound * (1 + 1e-12));
    }
  }
}

TEST(SpineBBM, SpineOnlyPathAttainsBound) {
  const auto p = params_for(OffspringDistribution::make({{1, 1.0}}), 1.0, 1.0);
  const auto path = simulate_bbm_spine(p, std::uint64_t{8});
  const auto report = spine_bound_check(path, p);
  EXPECT_EQ(report.violations, 0u);
  for (double r : report.ratios) EXPECT_NEAR(r, 1.0, 1e-12);
}

TEST(SpineBBM, DriftOfSpine) {
  const auto p = params_for(OffspringDistribution::make({{1, 1.0}}), 1.0, 1.0);
  const auto runs = simulate_bbm_spine_batch(p, 10000, 21);
  std::vector<double> xi;
  for (const auto& r : runs) xi.push_back(r.spine_position.back());
  EXPECT_TRUE(compare_two_sided(mc_estimate(xi), 1.0, 4.0).pass);
}

TEST(Statistical, MartingaleMeanAndPopulationGrowth) {
  for (const auto& [lambda, t] : std::vector<std::pair<double, double>>{{0.5, 0.5}, {0.5, 1.0}, {1.0, 2.0}}) {
    const auto p = params_for(binary_offspring(0.6), lambda, t);
    const auto runs = simulate_bbm_p_batch(p, 10000, 1000 + static_cast<std::uint64_t>(10 * t));
    std::vector<double> z;
    std::vector<double> counts;
    for (const auto& r : runs) {
      z.push_back(r.z.back());
      counts.push_back(static_cast<double>(r.counts.back()));
    }
    EXPECT_TRUE(compare_two_sided(mc_estimate(z), 1.0, 4.0).pass) << lambda << "," << t;
    EXPECT_TRUE(compare_two_sided(mc_estimate(counts), std::exp(0.2 * t), 4.0).pass);
  }
}

TEST(Statistical, TwoSidedIdentityAndSpineExponential) {
  const auto p = params_for(binary_offspring(0.6), 0.5, 2.0);
  const std::size_t count = 10000;
  const auto p_runs = simulate_bbm_p_batch(p, count, 77);
  const auto q_runs = simulate_bbm_spine_batch(p, count, 78);
  std::vector<double> alive;
  std::vector<double> inverse;
  std::vector<double> spine_exp;
  for (std::size_t i = 0; i < count; ++i) {
    alive.push_back(p_runs[i].counts.back() > 0);
    inverse.push_back(1.0 / q_runs[i].z.back());
    spine_exp.push_back(spine_exponential(q_runs[i].spine_position.back(), 2.0, p));
  }
  EXPECT_TRUE(compare_two_sided(mc_estimate(alive), mc_estimate(inverse)).pass);
  EXPECT_TRUE(compare_two_sided(mc_estimate(spine_exp), 1.0, 4.0).pass);
}

TEST(Batch, ThreadCountInvariance) {
  const auto p = params_for(binary_offspring(0.6), 0.5, 1.0);
  const auto a = simulate_bbm_spine_batch(p, 500, 3, {}, 1);
  const auto b = simulate_bbm_spine_batch(p, 500, 3, {}, 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].z, b[i].z);
    EXPECT_EQ(a[i].spine_position, b[i].spine_position);
  }
}
