#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "brute_force.hpp"
#include "spinecheck/oracle.hpp"

using namespace spinecheck;

namespace {

std::vector<OffspringDistribution> test_laws() {
  return {binary_offspring(0.6), binary_offspring(0.5),
          OffspringDistribution::make({{0, 0.25}, {1, 0.25}, {2, 0.5}}),
          OffspringDistribution::make({{0, 0.2}, {1, 0.1}, {3, 0.7}}),
          OffspringDistribution::make({{1, 0.5}, {2, 0.5}})};
}

void expect_law_near(const ExactLaw& law, const brute::Law& expected, double tol) {
  for (const auto& [j, p] : expected) EXPECT_NEAR(law.mass(j), p, tol) << "atom " << j;
  for (const auto& [j, p] : law.atoms) EXPECT_TRUE(expected.count(j)) << "extra atom " << j;
}

}  // namespace

TEST(ExactLawP, HandComputedBinary) {
  const auto d = binary_offspring(0.6);
  expect_law_near(exact_law_p(d, 1), {{0, 0.4}, {2, 0.6}}, 1e-15);
  expect_law_near(exact_law_p(d, 2), {{0, 0.496}, {2, 0.288}, {4, 0.216}}, 1e-15);
  EXPECT_NEAR(exact_law_p(d, 2).mean(), 1.44, 1e-14);
  expect_law_near(exact_law_p(d, 0, 3), {{3, 1.0}}, 0.0);
}

TEST(ExactLawP, MatchesEnumeration) {
  for (const auto& d : test_laws()) {
    for (unsigned n = 0; n <= 3; ++n) {
      for (std::uint64_t a : {1u, 2u}) {
        expect_law_near(exact_law_p(d, n, a), brute::law_p(d, n, a), 1e-12);
      }
    }
  }
}

TEST(ExactLawP, MeanIdentity) {
  for (const auto& d : test_laws()) {
    for (unsigned n = 0; n <= 6; ++n) {
      const ExactLaw law = exact_law_p(d, n);
      const double expected = std::pow(d.mean(), n);
      EXPECT_NEAR(law.mean(), expected, 1e-9 * expected);
      EXPECT_NEAR(law.total(), 1.0, 1e-10);
      EXPECT_LE(law.pruned_mass, 1e-12);
    }
  }
}

TEST(ExactLawP, RefusesSupportExplosion) {
  const auto wide = OffspringDistribution::make({{0, 0.5}, {64, 0.5}});
  try {
    exact_law_p(wide, 4);
    FAIL() << "expected refusal";
  } catch (const SupportExplosion& e) {
    EXPECT_EQ(e.generation(), 4u);
  }
  EXPECT_THROW(exact_law_p(binary_offspring(0.6), 9), SupportExplosion);
  EXPECT_NO_THROW(exact_law_p(binary_offspring(0.6), 8));
}

TEST(ExactLawQ, HandComputed) {
  const auto d = binary_offspring(0.6);
  expect_law_near(exact_law_q(d, 1), {{2, 1.0}}, 1e-15);
  expect_law_near(exact_law_q(d, 2), {{2, 0.4}, {4, 0.6}}, 1e-15);
  const auto one = OffspringDistribution::make({{1, 1.0}});
  for (unsigned n = 0; n <= 5; ++n) expect_law_near(exact_law_q(one, n), {{1, 1.0}}, 1e-15);
}

TEST(ExactLawQ, NoMassAtZeroAndSumsToOne) {
  for (const auto& d : test_laws()) {
    for (unsigned n = 0; n <= 6; ++n) {
      const ExactLaw q = exact_law_q(d, n);
      EXPECT_EQ(q.mass(0), 0.0);
      EXPECT_NEAR(q.total(), 1.0, 1e-10);
    }
  }
}

TEST(ExactLawQ, SpineRecursionMatchesEnumeration) {
  for (const auto& d : test_laws()) {
    for (unsigned n = 0; n <= 3; ++n) {
      expect_law_near(exact_law_q_spine(d, n), brute::law_q_spine(d, n), 1e-14);
      expect_law_near(exact_law_q(d, n), brute::law_q_spine(d, n), 1e-14);
    }
  }
}

TEST(QInverseZ, Examples) {
  const auto d = binary_offspring(0.6);
  EXPECT_NEAR(exact_q_inverse_z(d, 0), 1.0, 1e-15);
  EXPECT_NEAR(exact_q_inverse_z(d, 1), 0.6, 1e-15);
  EXPECT_NEAR(exact_q_inverse_z(d, 2), 0.504, 1e-15);
}

TEST(QInverseZ, NonIncreasingAndStrictWithExtinction) {
  for (const auto& d : test_laws()) {
    double previous = exact_q_inverse_z(d, 0);
    for (unsigned n = 1; n <= 8; ++n) {
      const double value = exact_q_inverse_z(d, n);
      EXPECT_LE(value, previous + 1e-15);
      EXPECT_NEAR(value, brute::survival(d, n), 1e-10);
      previous = value;
    }
    if (d.mass(0) > 0.0) {
      EXPECT_LT(exact_q_inverse_z(d, 1), 1.0);
    } else {
      EXPECT_NEAR(exact_q_inverse_z(d, 6), 1.0, 1e-12);
    }
  }
}

TEST(SupermartingaleIdentity, BinaryAtomByHand) {
  const auto r = check_supermartingale_identity(binary_offspring(0.6), 1, 1);
  ASSERT_EQ(r.atoms.size(), 1u);
  EXPECT_EQ(r.atoms[0].atom, 2u);
  EXPECT_NEAR(r.atoms[0].lhs, 0.504, 1e-14);
  EXPECT_NEAR(r.atoms[0].rhs, 0.504, 1e-14);
  EXPECT_TRUE(r.pass);
}

TEST(SupermartingaleIdentity, MartingaleCase) {
  const auto one = OffspringDistribution::make({{1, 1.0}});
  for (unsigned n = 1; n <= 3; ++n) {
    for (unsigned s = 1; s <= 3; ++s) {
      const auto r = check_supermartingale_identity(one, n, s);
      ASSERT_EQ(r.atoms.size(), 1u);
      EXPECT_NEAR(r.atoms[0].lhs, 1.0, 1e-15);
      EXPECT_NEAR(r.atoms[0].rhs, 1.0, 1e-15);
    }
  }
}

TEST(SupermartingaleIdentity, AllLawsAndTower) {
  for (const auto& d : test_laws()) {
    for (unsigned n = 1; n <= 3; ++n) {
      for (unsigned s = 1; s <= 3; ++s) {
        const auto r = check_supermartingale_identity(d, n, s);
        EXPECT_TRUE(r.pass) << "n=" << n << " s=" << s << " dev=" << r.max_abs_deviation;
        EXPECT_LE(r.tower_deviation, 1e-10);
      }
    }
  }
  const auto r = check_supermartingale_identity(binary_offspring(0.6), 2, 1);
  ASSERT_EQ(r.atoms.size(), 2u);
  EXPECT_EQ(r.atoms[0].atom, 2u);
  EXPECT_EQ(r.atoms[1].atom, 4u);
}

TEST(ChangeOfMeasure, Examples) {
  const auto d = binary_offspring(0.6);
  const auto r = check_change_of_measure(d, 1);
  EXPECT_TRUE(r.pass);
  for (const auto& a : r.atoms) {
    if (a.atom == 2) {
      EXPECT_NEAR(a.lhs, 1.0, 1e-15);
      EXPECT_NEAR(a.rhs, 2 / 1.2 * 0.6, 1e-15);
    }
    if (a.atom == 0) {
      EXPECT_EQ(a.lhs, 0.0);
      EXPECT_EQ(a.rhs, 0.0);
    }
  }
  for (const auto& law : test_laws()) {
    for (unsigned n = 1; n <= 6; ++n) EXPECT_TRUE(check_change_of_measure(law, n).pass);
  }
  const auto one = OffspringDistribution::make({{1, 1.0}});
  const auto p = exact_law_p(one, 4);
  for (const auto& a : check_change_of_measure(one, 4).atoms) {
    EXPECT_DOUBLE_EQ(a.lhs, p.mass(a.atom));
  }
}
