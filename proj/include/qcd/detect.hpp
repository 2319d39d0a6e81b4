#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qcd/numeric.hpp"

namespace qcd {

enum class DetectorKind { cusum, sr };
enum class IncrementMode { exact_llr, score };

inline const char* to_string(DetectorKind k) { return k == DetectorKind::cusum ? "cusum" : "sr"; }
inline const char* to_string(IncrementMode m) { return m == IncrementMode::exact_llr ? "exact" : "score"; }

/// Largest |log increment| fed to the SR recursion; keeps exp() finite.
inline constexpr double kLogRatioClamp = 700.0;

inline double ratio_from_log(double log_increment) {
  return std::exp(std::clamp(log_increment, -kLogRatioClamp, kLogRatioClamp));
}

/// Running statistic of one detector: W_n (CUSUM, log scale) or R_n (SR,
/// linear scale), with the number of observations consumed.
struct DetectorState {
  DetectorKind kind = DetectorKind::cusum;
  double statistic = 0.0;
  std::size_t n = 0;

  static DetectorState fresh(DetectorKind kind) { return {kind, 0.0, 0}; }
};

/// W <- max{0, W + increment}.
inline DetectorState cusum_step(DetectorState state, double increment) {
  require(state.kind == DetectorKind::cusum, "cusum_step: state is not a CUSUM state");
  require_finite(increment, "cusum_step: increment");
  state.statistic = std::max(0.0, state.statistic + increment);
  ++state.n;
  return state;
}

/// R <- (1 + R) * ratio.
inline DetectorState sr_step(DetectorState state, double ratio) {
  require(state.kind == DetectorKind::sr, "sr_step: state is not an SR state");
  require(std::isfinite(ratio) && ratio > 0.0, "sr_step: ratio must be finite and positive");
  state.statistic = (1.0 + state.statistic) * ratio;
  ++state.n;
  return state;
}

/// Dispatches on kind: CUSUM takes log increments, SR takes ratios.
inline DetectorState step(DetectorState state, double value) {
  return state.kind == DetectorKind::cusum ? cusum_step(state, value) : sr_step(state, value);
}

struct AlarmRecord {
  std::size_t stop_time = 0;      // observations since the last (re)start
  std::size_t global_time = 0;    // observations since the beginning of the stream
  double statistic_at_stop = 0.0;
  double threshold = 0.0;
  std::size_t cycle_index = 0;    // 1-based
};

struct DetectionTrace {
  DetectorKind kind = DetectorKind::cusum;
  IncrementMode mode = IncrementMode::exact_llr;
  double threshold = 0.0;
  std::vector<double> statistics;  // value after each consumed observation
  std::vector<AlarmRecord> alarms;
  std::size_t consumed = 0;
  std::optional<std::size_t> change_point;     // known nu, when supplied
  std::optional<std::size_t> true_detection;   // index into alarms of I_nu

  bool alarmed() const { return !alarms.empty(); }

  /// T_{I_nu} - nu, when a change point was supplied and detected.
  std::optional<std::size_t> detection_delay() const {
    if (!change_point || !true_detection) return std::nullopt;
    return alarms[*true_detection].global_time - *change_point;
  }
};

/// Runs one detector until the first threshold crossing (statistic >=
/// threshold) or the end of the stream. For SR the stream carries ratios,
/// for CUSUM log increments.
inline DetectionTrace run_detector(std::span<const double> values, DetectorKind kind, IncrementMode mode,
                                   double threshold) {
  require(threshold > 0.0, "run_detector: threshold must be positive");
  require(!values.empty(), "run_detector: empty increment stream");
  DetectionTrace trace;
  trace.kind = kind;
  trace.mode = mode;
  trace.threshold = threshold;
  auto state = DetectorState::fresh(kind);
  for (double v : values) {
    state = step(state, v);
    trace.statistics.push_back(state.statistic);
    if (state.statistic >= threshold) {
      trace.alarms.push_back({state.n, state.n, state.statistic, threshold, 1});
      break;
    }
  }
  trace.consumed = state.n;
  return trace;
}

/// Repeated application of the stopping rule: the detector restarts from a
/// fresh state after every alarm and consumes the whole stream. With a known
/// change point nu, the first alarm with global time > nu is marked as the
/// true detection.
inline DetectionTrace multi_cyclic_run(std::span<const double> values, DetectorKind kind, IncrementMode mode,
                                       double threshold, std::optional<std::size_t> change_point = std::nullopt) {
  require(threshold > 0.0, "multi_cyclic_run: threshold must be positive");
  require(!values.empty(), "multi_cyclic_run: empty increment stream");
  DetectionTrace trace;
  trace.kind = kind;
  trace.mode = mode;
  trace.threshold = threshold;
  trace.change_point = change_point;
  trace.statistics.reserve(values.size());
  auto state = DetectorState::fresh(kind);
  std::size_t global = 0;
  for (double v : values) {
    state = step(state, v);
    ++global;
    trace.statistics.push_back(state.statistic);
    if (state.statistic >= threshold) {
      trace.alarms.push_back({state.n, global, state.statistic, threshold, trace.alarms.size() + 1});
      if (change_point && !trace.true_detection && global > *change_point)
        trace.true_detection = trace.alarms.size() - 1;
      state = DetectorState::fresh(kind);
    }
  }
  trace.consumed = global;
  return trace;
}

/// step,statistic,alarm
inline std::string to_csv(const DetectionTrace& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "step,statistic,alarm\n";
  std::size_t next_alarm = 0;
  for (std::size_t i = 0; i < trace.statistics.size(); ++i) {
    const bool alarm = next_alarm < trace.alarms.size() && trace.alarms[next_alarm].global_time == i + 1;
    if (alarm) ++next_alarm;
    out << (i + 1) << ',' << trace.statistics[i] << ',' << (alarm ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace qcd
