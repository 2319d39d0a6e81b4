#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "qcd/offline.hpp"

using namespace qcd;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed, std::uint64_t index = 0) {
  RandomStream rng(seed, StreamPurpose::generic, index);
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  return x;
}

// Two-means evaluation written independently of the prefix-sum route.
double two_mean_statistic(const std::vector<double>& x, std::size_t n) {
  double left = 0.0, right = 0.0;
  for (std::size_t i = 0; i < n; ++i) left += x[i];
  for (std::size_t i = n; i < x.size(); ++i) right += x[i];
  const double N = double(x.size());
  return std::sqrt(double(n) * (N - double(n))) / N * (left / double(n) - right / (N - double(n)));
}

std::vector<double> step_series() {
  std::vector<double> x(100, 0.0);
  std::fill(x.begin() + 50, x.end(), 1.0);
  return x;
}

}  // namespace

TEST(BdStatistic, TwoPoints) {
  const std::vector<double> x{3.0, 7.0};
  EXPECT_DOUBLE_EQ(bd_statistic(x, 1), (3.0 - 7.0) / 2.0);
}

TEST(BdStatistic, ConstantSeriesIsZero) {
  const std::vector<double> x(40, 2.5);
  for (std::size_t n = 1; n < x.size(); ++n) EXPECT_NEAR(bd_statistic(x, n), 0.0, 1e-15);
}

TEST(BdStatistic, StepSeries) {
  const auto x = step_series();
  EXPECT_DOUBLE_EQ(bd_statistic(x, 50), -0.5);
  EXPECT_DOUBLE_EQ(two_mean_statistic(x, 50), -0.5);
}

TEST(BdStatistic, MatchesTwoMeanEvaluation) {
  const auto x = noise(300, 2);
  const auto t = bd_trace(x);
  for (std::size_t n = 1; n < x.size(); ++n) EXPECT_NEAR(t.values[n - 1], two_mean_statistic(x, n), 1e-12);
}

TEST(BdStatistic, BoundsChecked) {
  const std::vector<double> x{1.0, 2.0, 3.0};
  EXPECT_THROW(bd_statistic(x, 0), std::invalid_argument);
  EXPECT_THROW(bd_statistic(x, 3), std::invalid_argument);
  EXPECT_THROW(bd_trace(std::vector<double>{1.0}), std::invalid_argument);
}

TEST(BdEstimate, StepSeriesAtBoundary) {
  const auto x = step_series();
  const auto est = bd_estimate(x);
  EXPECT_EQ(est.index, 50u);
  // brute force over all n
  std::size_t best = 1;
  for (std::size_t n = 1; n < x.size(); ++n)
    if (std::abs(two_mean_statistic(x, n)) > std::abs(two_mean_statistic(x, best))) best = n;
  EXPECT_EQ(best, est.index);
}

TEST(BdEstimate, ShiftScaleReversal) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto x = noise(60 + s, 31, s);
    const auto base = bd_trace(x);
    std::vector<double> shifted(x), scaled(x), reversed(x.rbegin(), x.rend());
    for (double& v : shifted) v += 3.7;
    for (double& v : scaled) v *= -2.5;
    const auto ts = bd_trace(shifted), tc = bd_trace(scaled), tr = bd_trace(reversed);
    const std::size_t N = x.size();
    for (std::size_t n = 1; n < N; ++n) {
      EXPECT_NEAR(ts.values[n - 1], base.values[n - 1], 1e-12);
      EXPECT_NEAR(tc.values[n - 1], -2.5 * base.values[n - 1], 1e-12);
      EXPECT_NEAR(tr.values[N - n - 1], -base.values[n - 1], 1e-12);
    }
  }
}

TEST(BdEstimate, TieBreaksToSmallestIndex) {
  // Antisymmetric integer series: |Y(n)| = |Y(N-n)| exactly.
  const std::vector<double> x{1.0, 0.0, 0.0, 0.0, -1.0};
  const auto t = bd_trace(x);
  EXPECT_EQ(std::abs(t.values[0]), std::abs(t.values[3]));
  EXPECT_EQ(t.abs_max_index, 1u);
}

TEST(BdEstimate, MeanShiftLocalization) {
  const int reps = 1000;
  int hits = 0;
  for (int r = 0; r < reps; ++r) {
    auto x = noise(1000, 101, static_cast<std::uint64_t>(r));
    for (std::size_t i = 500; i < x.size(); ++i) x[i] += 1.0;
    const auto est = bd_estimate(x);
    if (std::abs(static_cast<long>(est.index) - 500) <= 20) ++hits;
  }
  EXPECT_GE(hits, 950);
}

TEST(NullThreshold, ScalesWithSdAndIsDeterministic) {
  const double a = bd_null_threshold(200, 1.0, 0.05, 400, 3);
  const double b = bd_null_threshold(200, 2.0, 0.05, 400, 3);
  EXPECT_GT(a, 0.0);
  EXPECT_DOUBLE_EQ(b, 2.0 * a);
  EXPECT_DOUBLE_EQ(a, bd_null_threshold(200, 1.0, 0.05, 400, 3));
  EXPECT_LT(bd_null_threshold(200, 1.0, 0.5, 400, 3), a);
}

TEST(Segment, ConstantSeriesHasNoChangePoints) {
  const ReturnSeries r(std::vector<double>(200, 1.0));
  const auto seg = bd_segment(r, SegmentOptions{});
  EXPECT_TRUE(seg.change_points.empty());
  ASSERT_EQ(seg.segments.size(), 1u);
  EXPECT_EQ(seg.segments[0].count, 200u);
}

TEST(Segment, TwoStepsRecovered) {
  int ok = 0;
  const int reps = 40;
  for (int r = 0; r < reps; ++r) {
    auto x = noise(900, 77, static_cast<std::uint64_t>(r));
    for (std::size_t i = 300; i < 600; ++i) x[i] += 1.0;
    for (std::size_t i = 600; i < 900; ++i) x[i] -= 1.0;
    SegmentOptions opt;
    opt.alpha = 0.01;
    opt.null_replications = 500;
    opt.seed = static_cast<std::uint64_t>(r) + 1;
    const auto seg = bd_segment(ReturnSeries(x), opt);
    if (seg.change_points.size() == 2 && std::abs(long(seg.change_points[0]) - 300) <= 20 &&
        std::abs(long(seg.change_points[1]) - 600) <= 20)
      ++ok;
  }
  EXPECT_GE(ok, reps * 95 / 100);
}

TEST(Segment, FixedThresholdAndMinSegment) {
  auto x = noise(200, 5);
  for (std::size_t i = 100; i < 200; ++i) x[i] += 2.0;
  const ReturnSeries r(x);
  const auto seg = bd_segment(r, 0.5, 30);
  ASSERT_FALSE(seg.change_points.empty());
  EXPECT_NEAR(double(seg.change_points[0]), 100.0, 10.0);
  for (std::size_t i = 1; i < seg.change_points.size(); ++i)
    EXPECT_LT(seg.change_points[i - 1], seg.change_points[i]);
  for (const auto& m : seg.segments) EXPECT_GE(m.count, 30u);
  const auto none = bd_segment(r, 1e9, 30);
  EXPECT_TRUE(none.change_points.empty());
  EXPECT_THROW(bd_segment(r, -1.0, 30), std::invalid_argument);
  EXPECT_THROW(bd_segment(r, 1.0, 1), std::invalid_argument);
}

TEST(Segment, DecisionsVisitLeftBeforeRight) {
  auto x = noise(600, 8);
  for (std::size_t i = 200; i < 400; ++i) x[i] += 2.0;
  const auto seg = bd_segment(ReturnSeries(x), 0.3, 30);
  ASSERT_GE(seg.decisions.size(), 3u);
  EXPECT_EQ(seg.decisions[0].segment, (IndexRange{0, 600}));
  EXPECT_EQ(seg.decisions[1].segment.begin, 0u);
}
