#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "qcd/detect.hpp"
#include "qcd/models.hpp"
#include "qcd/numeric.hpp"
#include "qcd/renewal.hpp"
#include "qcd/series.hpp"

namespace qcd {

enum class Regime { pre, post };

// ---------------------------------------------------------------------------
// Increment sources: how simulated observations become detector increments.
// Every source yields log-scale increments (LLR or score); SR exponentiates.

/// Exact log-likelihood ratios of a Gaussian change model.
struct GaussianLlrSource {
  GaussianChangeModel model;

  struct Stream {
    LlrLaw pre, post;
    double next(RandomStream& rng, Regime r) { return (r == Regime::pre ? pre : post).sample(rng); }
  };
  Stream stream() const { return {llr_law_pre(model), llr_law_post(model)}; }
};

/// Linear-quadratic score of observations drawn from `data` and
/// standardized by (center, scale).
struct GaussianScoreSource {
  GaussianChangeModel data;
  double center = 0.0;
  double scale = 1.0;
  ScoreParams params;

  struct Stream {
    const GaussianScoreSource* src;
    double next(RandomStream& rng, Regime r) {
      const auto& m = src->data;
      const double x = r == Regime::pre ? rng.normal(m.mu_pre(), m.sigma_pre()) : rng.normal(m.mu_post(), m.sigma_post());
      const double xs = (x - src->center) / src->scale;
      const auto& p = src->params;
      return p.c1 * xs + p.c2 * xs * xs - p.c3;
    }
  };
  Stream stream() const { return {this}; }
};

/// Sequential-rank score U_n - C of observations drawn from `data`.
struct RankScoreSource {
  GaussianChangeModel data;
  double c = 1.0;

  struct Stream {
    const RankScoreSource* src;
    RankState state;
    double next(RandomStream& rng, Regime r) {
      const auto& m = src->data;
      const double x = r == Regime::pre ? rng.normal(m.mu_pre(), m.sigma_pre()) : rng.normal(m.mu_post(), m.sigma_post());
      return state.consume(x);
    }
  };
  Stream stream() const { return {this, RankState(c)}; }
};

/// The same log increment every step, regardless of regime.
struct ConstantSource {
  double log_increment = 0.0;

  struct Stream {
    double value;
    double next(RandomStream&, Regime) { return value; }
  };
  Stream stream() const { return {log_increment}; }
};

using IncrementSource = std::variant<GaussianLlrSource, GaussianScoreSource, RankScoreSource, ConstantSource>;

struct DetectorConfig {
  DetectorKind kind = DetectorKind::cusum;
  IncrementSource source = ConstantSource{};

  /// Exact likelihood ratios: the martingale bounds ARL >= A, ARL >= e^h hold.
  bool exact_lr() const { return std::holds_alternative<GaussianLlrSource>(source); }
  IncrementMode mode() const { return exact_lr() ? IncrementMode::exact_llr : IncrementMode::score; }

  void validate() const {
    if (const auto* s = std::get_if<GaussianScoreSource>(&source)) {
      require(!s->params.degenerate(), "DetectorConfig: score is identically zero (no change specified)");
      require(s->scale > 0.0, "DetectorConfig: standardization scale must be positive");
    }
    if (const auto* s = std::get_if<RankScoreSource>(&source))
      require(s->c > 0.0, "DetectorConfig: rank design constant must be positive");
  }
};

/// Score source fitted from pre/post-change moment estimates of raw returns,
/// with the Gaussian-optimal design coefficients.
inline GaussianScoreSource fitted_score_source(const MomentEstimate& pre, const MomentEstimate& post) {
  require(pre.sd > 0.0 && post.sd > 0.0, "fitted_score_source: standard deviations must be positive");
  GaussianScoreSource s{GaussianChangeModel(pre.mean, pre.sd, post.mean, post.sd), pre.mean, pre.sd,
                        design_coefficients(pre.sd / post.sd, (post.mean - pre.mean) / pre.sd)};
  return s;
}

// ---------------------------------------------------------------------------
// Calibration inputs and results

struct CalibrationSpec {
  double gamma = 100.0;
  std::size_t replications = 10000;
  std::uint64_t seed = 1;
  double relative_tolerance = 0.02;
  std::size_t max_iterations = 60;
  std::size_t nu_stationary = 10000;
  bool check_stationarity = true;
  double cap_factor = 100.0;         // runs are truncated at cap_factor * gamma
  double max_cap_hit_rate = 0.01;

  std::size_t cap() const { return static_cast<std::size_t>(std::ceil(cap_factor * gamma)); }

  void validate() const {
    require(gamma > 1.0 && std::isfinite(gamma), "CalibrationSpec: gamma must exceed 1");
    require(replications >= 1, "CalibrationSpec: replications must be >= 1");
    require(relative_tolerance > 0.0, "CalibrationSpec: relative_tolerance must be positive");
    require(max_iterations >= 1, "CalibrationSpec: max_iterations must be >= 1");
    require(nu_stationary >= 1, "CalibrationSpec: nu_stationary must be >= 1");
  }
};

enum class Metric { arl, sadd, stadd };
inline const char* to_string(Metric m) { return m == Metric::arl ? "arl" : m == Metric::sadd ? "sadd" : "stadd"; }

struct PerformanceEstimate {
  Metric metric = Metric::arl;
  double value = 0.0;
  double std_error = 0.0;
  std::size_t replications = 0;
  double threshold = 0.0;
  std::size_t cap_hits = 0;
  std::size_t cap = 0;
  std::optional<std::size_t> change_point;  // STADD only
  std::optional<double> doubled_value;      // STADD stabilization check at 2 nu
  std::optional<double> doubled_std_error;
};

// ---------------------------------------------------------------------------
// Single-run simulation kernels

namespace detail {

struct RunOutcome {
  std::size_t time = 0;
  bool capped = false;
};

/// Observations 1..nu are pre-change, the rest post-change. Returns the
/// stopping time, or cap with capped = true.
template <class Stream>
RunOutcome run_once(DetectorKind kind, Stream& stream, RandomStream& rng, double threshold, std::size_t nu,
                    std::size_t cap) {
  double stat = 0.0;
  for (std::size_t n = 1; n <= cap; ++n) {
    const double inc = stream.next(rng, n <= nu ? Regime::pre : Regime::post);
    stat = kind == DetectorKind::cusum ? std::max(0.0, stat + inc) : (1.0 + stat) * ratio_from_log(inc);
    if (stat >= threshold) return {n, false};
  }
  return {cap, true};
}

/// Multi-cyclic run with restarts; returns T_{I_nu} - nu. The delay is
/// capped at `cap` observations after nu.
template <class Stream>
RunOutcome stationary_delay_once(DetectorKind kind, Stream& stream, RandomStream& rng, double threshold,
                                 std::size_t nu, std::size_t cap) {
  double stat = 0.0;
  for (std::size_t n = 1;; ++n) {
    const double inc = stream.next(rng, n <= nu ? Regime::pre : Regime::post);
    stat = kind == DetectorKind::cusum ? std::max(0.0, stat + inc) : (1.0 + stat) * ratio_from_log(inc);
    if (stat >= threshold) {
      if (n > nu) return {n - nu, false};
      stat = 0.0;
    }
    if (n >= nu + cap) return {cap, true};
  }
}

template <class Fn>
decltype(auto) with_stream(const DetectorConfig& config, Fn&& fn) {
  return std::visit([&](const auto& src) { return fn(src); }, config.source);
}

inline PerformanceEstimate finish_estimate(Metric metric, const std::vector<RunOutcome>& runs, double threshold,
                                           std::size_t cap) {
  std::vector<double> t(runs.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    t[i] = static_cast<double>(runs[i].time);
    hits += runs[i].capped ? 1 : 0;
  }
  const auto s = summarize(t);
  PerformanceEstimate e;
  e.metric = metric;
  e.value = s.mean;
  e.std_error = s.std_error;
  e.replications = runs.size();
  e.threshold = threshold;
  e.cap_hits = hits;
  e.cap = cap;
  return e;
}

inline void check_cap_rate(const PerformanceEstimate& e, const CalibrationSpec& spec) {
  const double rate = static_cast<double>(e.cap_hits) / static_cast<double>(std::max<std::size_t>(1, e.replications));
  if (rate > spec.max_cap_hit_rate)
    throw EstimationError(std::string(to_string(e.metric)) + " estimate unreliable: " + std::to_string(e.cap_hits) +
                          " of " + std::to_string(e.replications) + " runs hit the cap of " + std::to_string(e.cap) +
                          " observations at threshold " + std::to_string(e.threshold));
}

template <class Source>
std::vector<RunOutcome> simulate_runs(DetectorKind kind, const Source& src, double threshold, std::size_t nu,
                                      std::size_t cap, std::size_t replications, std::uint64_t seed,
                                      StreamPurpose purpose) {
  std::vector<RunOutcome> runs(replications);
  parallel_for(replications, [&](std::size_t r) {
    RandomStream rng(seed, purpose, r);
    auto stream = src.stream();
    runs[r] = run_once(kind, stream, rng, threshold, nu, cap);
  });
  return runs;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Estimators

/// Mean stopping time under pure pre-change sampling.
inline PerformanceEstimate estimate_arl(const DetectorConfig& config, double threshold, const CalibrationSpec& spec) {
  require(threshold > 0.0, "estimate_arl: threshold must be positive");
  spec.validate();
  config.validate();
  const std::size_t cap = spec.cap();
  auto runs = detail::with_stream(config, [&](const auto& src) {
    return detail::simulate_runs(config.kind, src, threshold, std::numeric_limits<std::size_t>::max(), cap,
                                 spec.replications, spec.seed, StreamPurpose::arl);
  });
  auto e = detail::finish_estimate(Metric::arl, runs, threshold, cap);
  detail::check_cap_rate(e, spec);
  return e;
}

/// Mean stopping time under pure post-change sampling (change at nu = 0),
/// which equals the worst-case conditional delay for these procedures.
inline PerformanceEstimate estimate_sadd(const DetectorConfig& config, double threshold, const CalibrationSpec& spec) {
  require(threshold > 0.0, "estimate_sadd: threshold must be positive");
  spec.validate();
  config.validate();
  const std::size_t cap = spec.cap();
  auto runs = detail::with_stream(config, [&](const auto& src) {
    return detail::simulate_runs(config.kind, src, threshold, 0, cap, spec.replications, spec.seed,
                                 StreamPurpose::sadd);
  });
  auto e = detail::finish_estimate(Metric::sadd, runs, threshold, cap);
  detail::check_cap_rate(e, spec);
  return e;
}

namespace detail {

inline PerformanceEstimate stadd_at(const DetectorConfig& config, double threshold, const CalibrationSpec& spec,
                                    std::size_t nu, StreamPurpose purpose) {
  const std::size_t cap = spec.cap();
  std::vector<RunOutcome> runs(spec.replications);
  with_stream(config, [&](const auto& src) {
    parallel_for(spec.replications, [&](std::size_t r) {
      RandomStream rng(spec.seed, purpose, r);
      auto stream = src.stream();
      runs[r] = stationary_delay_once(config.kind, stream, rng, threshold, nu, cap);
    });
    return 0;
  });
  auto e = finish_estimate(Metric::stadd, runs, threshold, cap);
  e.change_point = nu;
  check_cap_rate(e, spec);
  return e;
}

}  // namespace detail

/// Mean of T_{I_nu} - nu for multi-cyclic runs with the change at
/// nu = spec.nu_stationary. When enabled, the estimate is repeated at 2 nu
/// on independent streams; a shift of 2 (se + se') or more is an error.
inline PerformanceEstimate estimate_stadd(const DetectorConfig& config, double threshold, const CalibrationSpec& spec) {
  require(threshold > 0.0, "estimate_stadd: threshold must be positive");
  spec.validate();
  config.validate();
  auto e = detail::stadd_at(config, threshold, spec, spec.nu_stationary, StreamPurpose::stadd);
  if (spec.check_stationarity) {
    const auto d = detail::stadd_at(config, threshold, spec, 2 * spec.nu_stationary, StreamPurpose::stadd_doubled);
    e.doubled_value = d.value;
    e.doubled_std_error = d.std_error;
    const double allowance = 2.0 * (e.std_error + d.std_error);
    if (std::abs(d.value - e.value) > allowance && std::abs(d.value - e.value) > 1e-12)
      throw EstimationError("estimate_stadd: stabilization check failed: STADD " + std::to_string(e.value) +
                            " at nu=" + std::to_string(spec.nu_stationary) + " vs " + std::to_string(d.value) +
                            " at nu=" + std::to_string(2 * spec.nu_stationary));
  }
  return e;
}

// ---------------------------------------------------------------------------
// Threshold calibration

/// Pathwise record of the running maximum of the detection statistic under
/// pre-change sampling, simulated once up to a top threshold. The stopping
/// time for any threshold t <= top is the first record reaching t, so every
/// ARL evaluation below `top` reuses the same random numbers.
class RunLengthProfile {
 public:
  template <class Source>
  static RunLengthProfile build(DetectorKind kind, const Source& src, double top, std::size_t cap,
                                std::size_t replications, std::uint64_t seed) {
    RunLengthProfile p;
    p.top_ = top;
    p.cap_ = cap;
    p.records_.resize(replications);
    parallel_for(replications, [&](std::size_t r) {
      RandomStream rng(seed, StreamPurpose::arl, r);
      auto stream = src.stream();
      auto& rec = p.records_[r];
      double stat = 0.0, best = -std::numeric_limits<double>::infinity();
      for (std::size_t n = 1; n <= cap; ++n) {
        const double inc = stream.next(rng, Regime::pre);
        stat = kind == DetectorKind::cusum ? std::max(0.0, stat + inc) : (1.0 + stat) * ratio_from_log(inc);
        if (stat > best) {
          best = stat;
          rec.emplace_back(n, stat);
          if (stat >= top) break;
        }
      }
    });
    return p;
  }

  double top() const { return top_; }

  /// ARL estimate at threshold t (t <= top); identical to estimate_arl with
  /// the same seed and replications.
  PerformanceEstimate arl(double t) const {
    require(t > 0.0 && t <= top_, "RunLengthProfile::arl: threshold outside the profiled range");
    std::vector<detail::RunOutcome> runs(records_.size());
    for (std::size_t r = 0; r < records_.size(); ++r) {
      const auto& rec = records_[r];
      const auto it = std::lower_bound(rec.begin(), rec.end(), t,
                                       [](const std::pair<std::size_t, double>& a, double v) { return a.second < v; });
      runs[r] = it == rec.end() ? detail::RunOutcome{cap_, true} : detail::RunOutcome{it->first, false};
    }
    return detail::finish_estimate(Metric::arl, runs, t, cap_);
  }

 private:
  double top_ = 0.0;
  std::size_t cap_ = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> records_;
};

struct ThresholdSolution {
  double threshold = 0.0;
  // Delta method: ARL standard error over the local slope dARL/dthreshold.
  double threshold_std_error = 0.0;
  PerformanceEstimate arl;
  std::size_t iterations = 0;
  double bracket_low = 0.0;
  double bracket_high = 0.0;
  std::vector<std::pair<double, double>> history;  // (threshold, Monte Carlo ARL)
};

/// Finds a threshold whose Monte Carlo ARL is within relative_tolerance of
/// gamma. The search brackets from the analytic bounds (h <= log gamma,
/// A <= gamma for exact likelihood ratios), expands upward when the bound
/// does not hold, then bisects on ARL estimates that share random numbers.
inline ThresholdSolution solve_threshold(const DetectorConfig& config, const CalibrationSpec& spec) {
  spec.validate();
  config.validate();
  const double gamma = spec.gamma;
  const std::size_t cap = spec.cap();
  auto within = [&](double arl) { return std::abs(arl - gamma) <= spec.relative_tolerance * gamma; };

  ThresholdSolution sol;
  double lo = 0.0;
  double hi = config.kind == DetectorKind::cusum ? std::log(gamma) : gamma;
  std::size_t iter = 0;

  auto build = [&](double top) {
    return detail::with_stream(config, [&](const auto& src) {
      return RunLengthProfile::build(config.kind, src, top, cap, spec.replications, spec.seed);
    });
  };
  RunLengthProfile profile = build(hi);
  PerformanceEstimate at_hi = profile.arl(hi);
  sol.history.emplace_back(hi, at_hi.value);
  while (at_hi.value < gamma && !within(at_hi.value)) {
    if (++iter > spec.max_iterations)
      throw EstimationError("solve_threshold: could not bracket gamma within max_iterations");
    lo = hi;
    hi *= 2.0;
    profile = build(hi);
    at_hi = profile.arl(hi);
    sol.history.emplace_back(hi, at_hi.value);
  }

  auto accept = [&](double t, PerformanceEstimate e) {
    detail::check_cap_rate(e, spec);
    // pathwise monotonicity: sorted by threshold, ARL must not decrease
    auto h = sol.history;
    std::sort(h.begin(), h.end());
    for (std::size_t i = 1; i < h.size(); ++i)
      if (h[i].second < h[i - 1].second)
        throw EstimationError("solve_threshold: nonmonotone ARL estimates between thresholds " +
                              std::to_string(h[i - 1].first) + " and " + std::to_string(h[i].first));
    sol.threshold = t;
    sol.arl = e;
    const double lo_t = 0.95 * t, hi_t = std::min(1.05 * t, profile.top());
    const double slope = (profile.arl(hi_t).value - profile.arl(lo_t).value) / (hi_t - lo_t);
    sol.threshold_std_error = e.std_error == 0.0 ? 0.0
                              : slope > 0.0     ? e.std_error / slope
                                                : std::numeric_limits<double>::infinity();
    sol.iterations = iter;
    sol.bracket_low = lo;
    sol.bracket_high = hi;
    return sol;
  };

  if (within(at_hi.value)) return accept(hi, at_hi);
  while (iter++ < spec.max_iterations) {
    const double mid = 0.5 * (lo + hi);
    const auto e = profile.arl(mid);
    sol.history.emplace_back(mid, e.value);
    if (within(e.value)) return accept(mid, e);
    (e.value < gamma ? lo : hi) = mid;
  }
  throw EstimationError("solve_threshold: max_iterations exceeded; last bracket [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "]");
}

/// Bisection on a design constant (e.g. the rank-score C) with the
/// detection threshold held fixed; ARL must increase with the parameter.
inline std::pair<double, PerformanceEstimate> solve_design_constant(
    const std::function<DetectorConfig(double)>& make_config, double threshold, double low, double high,
    const CalibrationSpec& spec) {
  spec.validate();
  require(low < high, "solve_design_constant: empty bracket");
  const double gamma = spec.gamma;
  auto within = [&](double arl) { return std::abs(arl - gamma) <= spec.relative_tolerance * gamma; };
  for (std::size_t iter = 0; iter < spec.max_iterations; ++iter) {
    const double mid = 0.5 * (low + high);
    const auto e = estimate_arl(make_config(mid), threshold, spec);
    if (within(e.value)) return {mid, e};
    (e.value < gamma ? low : high) = mid;
  }
  throw EstimationError("solve_design_constant: max_iterations exceeded");
}

}  // namespace qcd
