#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/normal.hpp>

namespace qcd {

// Raised when a Monte Carlo estimate cannot be trusted (cap hits, failed
// stabilization, nonconvergent series).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + " must be finite");
}

// ---------------------------------------------------------------------------
// Normal distribution helpers

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_pdf(double x) {
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// E[min{0, Z}] for Z ~ N(mean, sd^2), sd > 0.
inline double normal_negative_part_mean(double mean, double sd) {
  const double t = mean / sd;
  return mean * normal_cdf(-t) - sd * normal_pdf(t);
}

// ---------------------------------------------------------------------------
// Summation and sample summaries

/// Pairwise (tree) summation. The reduction order depends only on the length
/// of the input, so results are reproducible bit-for-bit.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

struct SampleSummary {
  double mean = 0.0;
  double sd = 0.0;         // divisor n - 1
  double std_error = 0.0;  // sd / sqrt(n)
  std::size_t count = 0;
};

inline SampleSummary summarize(std::span<const double> xs) {
  SampleSummary s;
  s.count = xs.size();
  if (xs.empty()) return s;
  s.mean = pairwise_sum(xs) / static_cast<double>(xs.size());
  if (xs.size() < 2) return s;
  std::vector<double> sq(xs.size());
  std::transform(xs.begin(), xs.end(), sq.begin(), [&](double x) { return (x - s.mean) * (x - s.mean); });
  s.sd = std::sqrt(pairwise_sum(sq) / static_cast<double>(xs.size() - 1));
  s.std_error = s.sd / std::sqrt(static_cast<double>(xs.size()));
  return s;
}

// ---------------------------------------------------------------------------
// Random streams
//
// Every replication draws from its own engine derived from (seed, purpose,
// index). Results are independent of thread count and scheduling.

using Engine = std::mt19937_64;

enum class StreamPurpose : std::uint32_t {
  arl = 1,
  sadd = 2,
  stadd = 3,
  stadd_doubled = 4,
  overshoot = 5,
  path_pre = 6,
  path_post = 7,
  path_sr = 8,
  bd_null = 9,
  generic = 10,
};

class RandomStream {
 public:
  RandomStream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index)
      : engine_(seed_engine(seed, purpose, index)) {}

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  Engine& engine() { return engine_; }

 private:
  static Engine seed_engine(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return Engine(seq);
  }

  Engine engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Parallel replication loop

inline unsigned worker_count() {
  if (const char* env = std::getenv("QCD_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls body(i) for i in [0, n). Each index is visited exactly once; bodies
/// must only write to per-index storage.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace qcd
