#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "qcd/models.hpp"

using namespace qcd;

TEST(Llr, EqualVarianceMidpointIsZero) {
  const GaussianChangeModel m(0, 1, 1, 1);
  EXPECT_NEAR(llr(m, 0.5), 0.0, 1e-15);
  EXPECT_NEAR(llr(m, 1.5), 1.0, 1e-15);
}

TEST(Llr, VarianceChangeAtCommonMean) {
  const GaussianChangeModel m(0, 1, 0, 2);
  EXPECT_NEAR(llr(m, 0.0), -std::log(2.0), 1e-15);
}

TEST(Llr, FarTail) {
  const GaussianChangeModel m(0, 1, 0, 2);
  EXPECT_NEAR(llr(m, 1e6) / (3.75e11 - std::log(2.0)), 1.0, 1e-14);
  EXPECT_THROW(llr(m, std::nan("")), std::invalid_argument);
}

TEST(Llr, InvalidModels) {
  EXPECT_THROW(GaussianChangeModel(0, 0, 1, 1), std::invalid_argument);
  EXPECT_THROW(GaussianChangeModel(0, 1, 1, -1), std::invalid_argument);
  EXPECT_THROW(GaussianChangeModel(0, 1, 0, 1), std::invalid_argument);
}

TEST(DesignCoefficients, UnitScaleMeanShift) {
  const auto p = design_coefficients(1.0, 1.0);
  EXPECT_DOUBLE_EQ(p.c1, 1.0);
  EXPECT_DOUBLE_EQ(p.c2, 0.0);
  EXPECT_DOUBLE_EQ(p.c3, 0.5);
  EXPECT_FALSE(p.degenerate());
}

TEST(DesignCoefficients, NoChangeIsDegenerate) {
  const auto p = design_coefficients(1.0, 0.0);
  EXPECT_EQ(p.c1, 0.0);
  EXPECT_EQ(p.c2, 0.0);
  EXPECT_EQ(p.c3, 0.0);
  EXPECT_TRUE(p.degenerate());
}

TEST(DesignCoefficients, FittedReturnsExample) {
  // Frozen from an independent 30-digit evaluation of the coefficient formulas.
  const double q = 0.2266 / 0.2306, delta = (0.0199 + 0.0029) / 0.2266;
  const auto p = design_coefficients(q, delta);
  EXPECT_NEAR(p.c1, 0.097157458690290197, 1e-14);
  EXPECT_NEAR(p.c2, 0.017195610982022839, 1e-14);
  EXPECT_NEAR(p.c3, 0.02238614551232062, 1e-14);
  EXPECT_NEAR(p.c1, 0.0971, 1e-4);
  EXPECT_NEAR(p.c2, 0.0172, 1e-4);
  EXPECT_NEAR(p.c3, 0.0223, 1e-4);
}

TEST(DesignCoefficients, InvalidQ) {
  EXPECT_THROW(design_coefficients(0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(design_coefficients(-1.0, 1.0), std::invalid_argument);
}

TEST(Score, Roots) {
  ScoreParams linear{1.0, 0.0, 0.5};
  EXPECT_DOUBLE_EQ(linear_quadratic_score(linear, 0.5), 0.0);
  ScoreParams quadratic{0.0, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(linear_quadratic_score(quadratic, 1.0), 0.0);
}

TEST(Score, DesignedScoreEqualsLlr) {
  RandomStream rng(42, StreamPurpose::generic, 0);
  for (int pair = 0; pair < 5; ++pair) {
    const double q = 0.3 + 2.0 * rng.uniform();
    const double delta = -2.0 + 4.0 * rng.uniform();
    const auto p = design_coefficients(q, delta);
    const auto m = standardized_model(p);
    for (int i = 0; i < 10000; ++i) {
      const double x = 3.0 * rng.normal();
      EXPECT_NEAR(linear_quadratic_score(p, x), llr(m, x), 1e-10);
    }
  }
}

TEST(Rank, EmptyHistory) {
  RankState s(0.5);
  EXPECT_DOUBLE_EQ(s.consume(3.0), -0.5);
}

TEST(Rank, CountsStrictlySmaller) {
  RankState s(2.0);
  for (double x : {1.0, 2.0, 3.0}) s.consume(x);
  const auto [score, next] = rank_score(s, 2.5);
  EXPECT_DOUBLE_EQ(score, 0.0);
  EXPECT_EQ(next.size(), 4u);
  EXPECT_EQ(s.size(), 3u);
  RankState ties(1.0);
  ties.consume(2.0);
  EXPECT_DOUBLE_EQ(ties.consume(2.0), -1.0);
}

TEST(Rank, UniformLawOfLastRank) {
  // U_n of an iid continuous stream is uniform on {0, ..., n-1}.
  const int n = 5, reps = 100000;
  std::vector<int> freq(n, 0);
  for (int r = 0; r < reps; ++r) {
    RandomStream rng(7, StreamPurpose::generic, static_cast<std::uint64_t>(r));
    RankState s(1.0);
    double last = 0.0;
    for (int i = 0; i < n; ++i) last = s.consume(rng.normal());
    freq[static_cast<int>(last + 1.0)] += 1;
  }
  const double p = 1.0 / n, sigma = std::sqrt(reps * p * (1 - p));
  for (int k = 0; k < n; ++k) EXPECT_LT(std::abs(freq[k] - reps * p), 3 * sigma) << k;
}

TEST(Rank, InvalidConstant) {
  EXPECT_THROW(RankState(0.0), std::invalid_argument);
  RankState s(1.0);
  EXPECT_THROW(s.consume(std::nan("")), std::invalid_argument);
}
