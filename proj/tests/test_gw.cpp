#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "brute_force.hpp"
#include "spinecheck/gw.hpp"
#include "spinecheck/stats.hpp"

using namespace spinecheck;

TEST(SimulateP, DeterministicLaws) {
  const auto one = OffspringDistribution::make({{1, 1.0}});
  EXPECT_EQ(simulate_p(one, 5, std::uint64_t{99}).sizes,
            (std::vector<std::uint64_t>{1, 1, 1, 1, 1, 1}));
  // {(0, 1)} has zero mean and is rejected by make_offspring, so immediate
  // extinction is exercised on a binary-law seed whose first draw is 0.
  const auto binary = binary_offspring(0.6);
  bool saw_immediate = false;
  for (std::uint64_t seed = 0; seed < 50 && !saw_immediate; ++seed) {
    const auto t = simulate_p(binary, 3, seed);
    if (t.sizes[1] == 0) {
      EXPECT_EQ(t.sizes, (std::vector<std::uint64_t>{1, 0, 0, 0}));
      saw_immediate = true;
    }
  }
  EXPECT_TRUE(saw_immediate);
}

TEST(SimulateP, RejectsZeroHorizon) {
  EXPECT_THROW(simulate_p(binary_offspring(0.6), 0, std::uint64_t{1}), std::invalid_argument);
  EXPECT_THROW(simulate_q_spine(binary_offspring(0.6), 0, std::uint64_t{1}),
               std::invalid_argument);
}

TEST(SimulateP, PopulationCapIdentifiesGeneration) {
  const auto big = OffspringDistribution::make({{64, 1.0}});
  try {
    simulate_p(big, 6, std::uint64_t{3});
    FAIL() << "expected overflow";
  } catch (const PopulationOverflow& e) {
    EXPECT_EQ(e.generation(), 4u);  // 64^4 > 1e7 >= 64^3
  }
  EXPECT_THROW(simulate_q_spine(big, 6, std::uint64_t{3}), PopulationOverflow);
}

TEST(SimulateP, NoRebirthAndSeedDeterminism) {
  const auto d = binary_offspring(0.6);
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto t = simulate_p(d, 15, seed);
    for (std::size_t n = 0; n + 1 < t.sizes.size(); ++n) {
      if (t.sizes[n] == 0) { EXPECT_EQ(t.sizes[n + 1], 0u); }
    }
  }
  EXPECT_EQ(simulate_p(d, 20, std::uint64_t{42}).sizes, simulate_p(d, 20, std::uint64_t{42}).sizes);
}

TEST(SimulateQSpine, NeverExtinctAndSpineRankInRange) {
  const auto d = OffspringDistribution::make({{0, 0.25}, {1, 0.25}, {2, 0.5}});
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto t = simulate_q_spine(d, 12, seed);
    for (std::size_t n = 0; n < t.sizes.size(); ++n) {
      EXPECT_GE(t.sizes[n], 1u);
      EXPECT_LT(t.spine_rank[n], t.sizes[n]);
    }
  }
  const auto one = simulate_q_spine(OffspringDistribution::make({{1, 1.0}}), 6, std::uint64_t{1});
  EXPECT_EQ(one.sizes, (std::vector<std::uint64_t>{1, 1, 1, 1, 1, 1, 1}));
}

TEST(SimulateQSpine, FirstGenerationOfBinaryIsTwo) {
  const auto d = binary_offspring(0.6);
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    EXPECT_EQ(simulate_q_spine(d, 1, seed).sizes[1], 2u);
  }
}

TEST(ZValue, Examples) {
  GWTrajectory t{{1, 2}, 1.2};
  EXPECT_NEAR(z_value(t, 1), 2 / 1.2, 1e-15);
  EXPECT_DOUBLE_EQ(z_value(t, 0), 1.0);
  GWTrajectory dead{{1, 0}, 1.7};
  EXPECT_DOUBLE_EQ(z_value(dead, 1), 0.0);
  EXPECT_THROW(z_value(t, 2), std::out_of_range);
}

TEST(ExtinctionTime, Examples) {
  const auto a = extinction_time(GWTrajectory{{1, 0, 0}, 1.2});
  ASSERT_FALSE(a.censored());
  EXPECT_EQ(*a.generation, 1u);
  const auto b = extinction_time(GWTrajectory{{1, 2, 4}, 1.2});
  EXPECT_TRUE(b.censored());
  EXPECT_EQ(b.horizon, 2u);
}

// Batch results are identical for any thread count.
TEST(Batch, ThreadCountInvariance) {
  const auto d = binary_offspring(0.6);
  const auto serial = simulate_q_spine_batch(d, 12, 3000, 77, 1);
  const auto parallel = simulate_q_spine_batch(d, 12, 3000, 77, 8);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].sizes, parallel[i].sizes);
    EXPECT_EQ(serial[i].spine_rank, parallel[i].spine_rank);
  }
  const auto p1 = simulate_p_batch(d, 12, 3000, 77, 1);
  const auto p8 = simulate_p_batch(d, 12, 3000, 77, 8);
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1[i].sizes, p8[i].sizes);
}

TEST(Statistical, SurvivalAndExtinctionTimeMatchPgf) {
  const auto d = binary_offspring(0.6);
  const std::size_t count = 100000;
  const auto runs = simulate_p_batch(d, 20, count, 1234);
  std::vector<double> alive(count);
  std::vector<double> beyond(count);
  for (std::size_t i = 0; i < count; ++i) {
    alive[i] = runs[i].sizes[20] > 0 ? 1.0 : 0.0;
    beyond[i] = extinction_time(runs[i]).censored() ? 1.0 : 0.0;
  }
  EXPECT_EQ(alive, beyond);
  EXPECT_TRUE(compare_two_sided(mc_estimate(alive), survival_after_n(d, 20)).pass);
}

TEST(Statistical, MartingaleMeanUnderP) {
  const auto d = OffspringDistribution::make({{0, 0.25}, {1, 0.25}, {2, 0.5}});
  const std::size_t count = 100000;
  const auto runs = simulate_p_batch(d, 10, count, 99);
  std::vector<double> z(count);
  for (unsigned n = 1; n <= 10; ++n) {
    for (std::size_t i = 0; i < count; ++i) z[i] = z_value(runs[i], n);
    EXPECT_TRUE(compare_two_sided(mc_estimate(z), 1.0, 4.0).pass) << "n=" << n;
  }
}

TEST(Statistical, SpineInverseZAtGenerationTwo) {
  const auto d = binary_offspring(0.6);
  const std::size_t count = 100000;
  const auto runs = simulate_q_spine_batch(d, 2, count, 4321);
  std::vector<double> inv(count);
  for (std::size_t i = 0; i < count; ++i) inv[i] = 1.0 / z_value(runs[i], 2);
  EXPECT_TRUE(compare_two_sided(mc_estimate(inv), 0.504).pass);
}

// Empirical spine law of X_n against brute-force enumeration of the Q-law.
TEST(Statistical, SpineLawMatchesEnumeration) {
  const auto d = OffspringDistribution::make({{0, 0.25}, {1, 0.25}, {2, 0.5}});
  const std::size_t count = 100000;
  const auto runs = simulate_q_spine_batch(d, 3, count, 555);
  for (unsigned n = 1; n <= 3; ++n) {
    const brute::Law exact = brute::law_q_spine(d, n);
    std::map<std::uint64_t, double> freq;
    for (const auto& t : runs) freq[t.sizes[n]] += 1.0 / count;
    for (const auto& [j, f] : freq) EXPECT_TRUE(exact.count(j)) << "unexpected atom " << j;
    for (const auto& [j, p] : exact) {
      const double se = std::sqrt(p * (1 - p) / count);
      EXPECT_NEAR(freq[j], p, 4 * se) << "n=" << n << " j=" << j;
    }
  }
}
