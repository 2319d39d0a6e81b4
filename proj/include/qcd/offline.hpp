#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qcd/numeric.hpp"
#include "qcd/series.hpp"

namespace qcd {

/// Y_N(n) for n = 1..N-1 (values[n-1]) and the location of max |Y_N(n)|.
struct BDTrace {
  std::vector<double> values;
  std::size_t abs_max_index = 0;  // smallest maximizing n, 1-based
  double abs_max_value = 0.0;
};

namespace detail {

// Y from prefix sums: prefix = S_n, total = S_N.
inline double bd_from_sums(double prefix, double total, std::size_t n, std::size_t N) {
  const double nn = static_cast<double>(n);
  const double rest = static_cast<double>(N - n);
  const double weight = std::sqrt(nn * rest / (static_cast<double>(N) * static_cast<double>(N)));
  return weight * (prefix / nn - (total - prefix) / rest);
}

}  // namespace detail

/// sqrt(n(N-n)/N^2) * (mean of the first n - mean of the last N-n), 1 <= n <= N-1.
inline double bd_statistic(std::span<const double> x, std::size_t n) {
  const std::size_t N = x.size();
  require(N >= 2 && n >= 1 && n <= N - 1, "bd_statistic: n must satisfy 1 <= n <= N-1");
  double prefix = 0.0;
  for (std::size_t i = 0; i < n; ++i) prefix += x[i];
  double total = prefix;
  for (std::size_t i = n; i < N; ++i) total += x[i];
  return detail::bd_from_sums(prefix, total, n, N);
}

inline double bd_statistic(const ReturnSeries& series, std::size_t n) { return bd_statistic(series.values(), n); }

inline BDTrace bd_trace(std::span<const double> x) {
  const std::size_t N = x.size();
  require(N >= 2, "bd_estimate: need at least 2 observations");
  double total = 0.0;
  for (double v : x) total += v;
  BDTrace t;
  t.values.resize(N - 1);
  double prefix = 0.0;
  for (std::size_t n = 1; n < N; ++n) {
    prefix += x[n - 1];
    t.values[n - 1] = detail::bd_from_sums(prefix, total, n, N);
    const double a = std::abs(t.values[n - 1]);
    if (n == 1 || a > t.abs_max_value) {
      t.abs_max_value = a;
      t.abs_max_index = n;
    }
  }
  return t;
}

struct BDEstimate {
  std::size_t index = 0;  // nu-hat: number of observations before the change
  BDTrace trace;
};

inline BDEstimate bd_estimate(std::span<const double> x) {
  BDTrace t = bd_trace(x);
  const std::size_t idx = t.abs_max_index;
  return {idx, std::move(t)};
}

inline BDEstimate bd_estimate(const ReturnSeries& series) { return bd_estimate(series.values()); }

/// 1 - alpha quantile of max_n |Y_N(n)| for iid N(0, sd^2) data of the given
/// length, by Monte Carlo.
inline double bd_null_threshold(std::size_t length, double sd, double alpha = 0.05, std::size_t replications = 1000,
                                std::uint64_t seed = 1) {
  require(length >= 2, "bd_null_threshold: length must be >= 2");
  require(alpha > 0.0 && alpha < 1.0, "bd_null_threshold: alpha must lie in (0, 1)");
  require(replications >= 1, "bd_null_threshold: replications must be >= 1");
  std::vector<double> maxima(replications);
  parallel_for(replications, [&](std::size_t r) {
    RandomStream rng(seed, StreamPurpose::bd_null, (static_cast<std::uint64_t>(length) << 32) | r);
    std::vector<double> x(length);
    for (double& v : x) v = rng.normal();
    maxima[r] = bd_trace(x).abs_max_value;
  });
  std::sort(maxima.begin(), maxima.end());
  const auto k = static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(replications))) - 1;
  return sd * maxima[std::min(k, replications - 1)];
}

struct SegmentDecision {
  IndexRange segment;      // within the input series
  std::size_t argmax = 0;  // absolute split position (observations before it)
  double statistic = 0.0;  // max |Y|
  double threshold = 0.0;
  bool split = false;
  std::string reason;
};

struct SegmentationResult {
  std::vector<std::size_t> change_points;  // strictly increasing split positions
  std::vector<MomentEstimate> segments;
  std::vector<SegmentDecision> decisions;  // in visiting order (depth first, left before right)
};

struct SegmentOptions {
  std::optional<double> threshold;  // fixed; otherwise the Gaussian-null quantile per segment
  std::size_t min_segment = 30;
  double alpha = 0.05;
  std::size_t null_replications = 1000;
  std::uint64_t seed = 1;
};

namespace detail {

inline void bd_segment_into(const ReturnSeries& series, IndexRange range, const SegmentOptions& opt,
                            SegmentationResult& out) {
  SegmentDecision d;
  d.segment = range;
  if (range.width() < 2 * opt.min_segment) {
    d.reason = "segment shorter than 2*min_segment";
    out.decisions.push_back(d);
    return;
  }
  const auto x = series.values().subspan(range.begin, range.width());
  const BDTrace t = bd_trace(x);
  d.argmax = range.begin + t.abs_max_index;
  d.statistic = t.abs_max_value;
  if (opt.threshold) {
    d.threshold = *opt.threshold;
  } else {
    const double sd = summarize(x).sd;
    d.threshold = bd_null_threshold(range.width(), sd, opt.alpha, opt.null_replications, opt.seed);
  }
  const bool children_ok = t.abs_max_index >= opt.min_segment && range.width() - t.abs_max_index >= opt.min_segment;
  if (!(d.statistic > d.threshold)) {
    d.reason = "max |Y| does not exceed threshold";
  } else if (!children_ok) {
    d.reason = "split would leave a segment shorter than min_segment";
  } else {
    d.split = true;
    d.reason = "split";
  }
  out.decisions.push_back(d);
  if (!d.split) return;
  bd_segment_into(series, {range.begin, d.argmax}, opt, out);
  out.change_points.push_back(d.argmax);
  bd_segment_into(series, {d.argmax, range.end}, opt, out);
}

}  // namespace detail

/// Recursive divide-and-conquer segmentation: split at the BD estimate while
/// max |Y| exceeds the threshold and both halves keep min_segment points.
inline SegmentationResult bd_segment(const ReturnSeries& series, const SegmentOptions& options) {
  require(options.min_segment >= 2, "bd_segment: min_segment must be >= 2");
  require(!options.threshold || *options.threshold > 0.0, "bd_segment: threshold must be positive");
  require(series.size() >= 2, "bd_segment: need at least 2 observations");
  SegmentationResult result;
  detail::bd_segment_into(series, {0, series.size()}, options, result);
  std::size_t begin = 0;
  for (std::size_t i = 0; i <= result.change_points.size(); ++i) {
    const std::size_t end = i < result.change_points.size() ? result.change_points[i] : series.size();
    if (end - begin >= 2) result.segments.push_back(estimate_moments(series, {begin, end}));
    begin = end;
  }
  return result;
}

inline SegmentationResult bd_segment(const ReturnSeries& series, double significance_threshold,
                                     std::size_t min_segment) {
  SegmentOptions opt;
  opt.threshold = significance_threshold;
  opt.min_segment = min_segment;
  return bd_segment(series, opt);
}

/// n,Y
inline std::string to_csv(const BDTrace& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "n,Y\n";
  for (std::size_t i = 0; i < trace.values.size(); ++i) out << (i + 1) << ',' << trace.values[i] << '\n';
  return out.str();
}

}  // namespace qcd
