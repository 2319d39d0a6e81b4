#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "qcd/numeric.hpp"

namespace qcd {

/// Pre-change density f = N(mu_pre, sigma_pre^2), post-change density
/// g = N(mu_post, sigma_post^2).
class GaussianChangeModel {
 public:
  GaussianChangeModel(double mu_pre, double sigma_pre, double mu_post, double sigma_post)
      : mu_pre_(mu_pre), sigma_pre_(sigma_pre), mu_post_(mu_post), sigma_post_(sigma_post) {
    require(std::isfinite(mu_pre) && std::isfinite(mu_post), "GaussianChangeModel: means must be finite");
    require(sigma_pre > 0.0 && std::isfinite(sigma_pre), "GaussianChangeModel: sigma_pre must be positive");
    require(sigma_post > 0.0 && std::isfinite(sigma_post), "GaussianChangeModel: sigma_post must be positive");
    require(mu_pre != mu_post || sigma_pre != sigma_post, "GaussianChangeModel: pre- and post-change laws coincide");
  }

  double mu_pre() const { return mu_pre_; }
  double sigma_pre() const { return sigma_pre_; }
  double mu_post() const { return mu_post_; }
  double sigma_post() const { return sigma_post_; }
  bool equal_variance() const { return sigma_pre_ == sigma_post_; }

 private:
  double mu_pre_, sigma_pre_, mu_post_, sigma_post_;
};

/// log g(x) - log f(x), evaluated in log space.
inline double llr(const GaussianChangeModel& m, double x) {
  require_finite(x, "llr: observation");
  const double zf = (x - m.mu_pre()) / m.sigma_pre();
  const double zg = (x - m.mu_post()) / m.sigma_post();
  return std::log(m.sigma_pre() / m.sigma_post()) + 0.5 * (zf * zf - zg * zg);
}

/// Coefficients of the linear-quadratic score C1*x + C2*x^2 - C3 applied to
/// standardized observations.
struct ScoreParams {
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  double q = 1.0;      // sigma_pre / sigma_post
  double delta = 0.0;  // (mu_post - mu_pre) / sigma_pre

  // An identically zero score specifies no change; detectors refuse it.
  bool degenerate() const { return c1 == 0.0 && c2 == 0.0 && c3 == 0.0; }
};

/// Coefficients that turn the score into the exact log-likelihood ratio of
/// N(0,1) -> N(delta, 1/q^2).
inline ScoreParams design_coefficients(double q, double delta) {
  require(q > 0.0 && std::isfinite(q), "design_coefficients: q must be positive");
  require_finite(delta, "design_coefficients: delta");
  ScoreParams p;
  p.q = q;
  p.delta = delta;
  p.c1 = delta * q * q;
  p.c2 = (1.0 - q * q) / 2.0;
  p.c3 = delta * delta * q * q / 2.0 - std::log(q);
  return p;
}

/// Standardized Gaussian model whose LLR the designed score reproduces.
inline GaussianChangeModel standardized_model(const ScoreParams& p) {
  return GaussianChangeModel(0.0, 1.0, p.delta, 1.0 / p.q);
}

inline double linear_quadratic_score(const ScoreParams& p, double x_std) {
  require_finite(x_std, "linear_quadratic_score: observation");
  return p.c1 * x_std + p.c2 * x_std * x_std - p.c3;
}

/// Sequential-rank state: all observations seen so far (kept sorted) and the
/// design constant C.
class RankState {
 public:
  explicit RankState(double c) : c_(c) { require(c > 0.0 && std::isfinite(c), "RankState: C must be positive"); }

  double c() const { return c_; }
  std::size_t size() const { return history_.size(); }
  const std::vector<double>& history() const { return history_; }

  /// Consumes x and returns U_n - C, where U_n counts earlier observations
  /// strictly smaller than x (ties do not count).
  double consume(double x) {
    require_finite(x, "rank_score: observation");
    const auto it = std::lower_bound(history_.begin(), history_.end(), x);
    const auto u = static_cast<double>(it - history_.begin());
    history_.insert(it, x);
    return u - c_;
  }

 private:
  double c_;
  std::vector<double> history_;
};

inline std::pair<double, RankState> rank_score(RankState state, double x) {
  const double s = state.consume(x);
  return {s, std::move(state)};
}

}  // namespace qcd
