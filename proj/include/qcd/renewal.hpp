#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qcd/detect.hpp"
#include "qcd/models.hpp"
#include "qcd/numeric.hpp"

namespace qcd {

/// A constant with its Monte Carlo standard error. Exact (series) values
/// have zero standard error and zero replications.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t replications = 0;
  std::size_t terms = 0;  // series terms kept, when applicable
};

struct EstimationPolicy {
  std::optional<std::size_t> series_truncation;  // K; automatic when empty
  std::size_t replications = 10000;
  std::size_t horizon = 1000;
  std::uint64_t seed = 1;

  void validate() const {
    require(!series_truncation || *series_truncation >= 1, "EstimationPolicy: truncation K must be >= 1");
    require(replications >= 1, "EstimationPolicy: replications must be >= 1");
    require(horizon >= 2, "EstimationPolicy: horizon must be >= 2");
  }
};

struct RenewalConstants {
  double i_f = 0.0;
  double i_g = 0.0;
  Estimate zeta;
  Estimate varkappa;
  Estimate beta0;
  Estimate beta_inf;
  Estimate c0;
  Estimate c_inf;
};

/// Law of one LLR increment written as a + b z + c z^2 with z ~ N(0,1).
struct LlrLaw {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double mean() const { return a + c; }
  double second_moment() const { return a * a + b * b + 3.0 * c * c + 2.0 * a * c; }
  bool gaussian() const { return c == 0.0; }
  double sample(RandomStream& rng) const {
    const double z = rng.normal();
    return a + (b + c * z) * z;
  }
};

/// LLR law under the pre-change density f.
inline LlrLaw llr_law_pre(const GaussianChangeModel& m) {
  const double d = m.mu_post() - m.mu_pre();
  const double sp = m.sigma_pre(), s = m.sigma_post();
  return {std::log(sp / s) - d * d / (2.0 * s * s), d * sp / (s * s), 0.5 - sp * sp / (2.0 * s * s)};
}

/// LLR law under the post-change density g.
inline LlrLaw llr_law_post(const GaussianChangeModel& m) {
  const double d = m.mu_post() - m.mu_pre();
  const double sp = m.sigma_pre(), s = m.sigma_post();
  return {std::log(sp / s) + d * d / (2.0 * sp * sp), d * s / (sp * sp), s * s / (2.0 * sp * sp) - 0.5};
}

struct KlNumbers {
  double i_f = 0.0;  // -E_inf[LLR_1] = KL(f || g)
  double i_g = 0.0;  // E_0[LLR_1]    = KL(g || f)
};

inline KlNumbers kl_numbers(const GaussianChangeModel& m) {
  const double d2 = (m.mu_post() - m.mu_pre()) * (m.mu_post() - m.mu_pre());
  const double sp = m.sigma_pre(), s = m.sigma_post();
  KlNumbers k;
  k.i_g = std::log(sp / s) + (s * s + d2) / (2.0 * sp * sp) - 0.5;
  k.i_f = std::log(s / sp) + (sp * sp + d2) / (2.0 * s * s) - 0.5;
  return k;
}

// ---------------------------------------------------------------------------
// Limiting overshoots

inline constexpr double kSeriesTermTolerance = 1e-12;
inline constexpr std::size_t kSeriesTermCap = 1'000'000;

struct Overshoots {
  Estimate zeta;
  Estimate varkappa;
};

namespace detail {

inline Overshoots overshoots_exact(const GaussianChangeModel& m, const EstimationPolicy& policy) {
  const LlrLaw pre = llr_law_pre(m), post = llr_law_post(m);
  const double i_g = kl_numbers(m).i_g;
  const double bp = std::abs(pre.b), bq = std::abs(post.b);
  const std::size_t cap = policy.series_truncation.value_or(kSeriesTermCap);
  const bool fixed = policy.series_truncation.has_value();

  double zeta_sum = 0.0, kappa_sum = 0.0;
  std::size_t zeta_terms = 0, kappa_terms = 0;
  bool zeta_done = false, kappa_done = false;
  double zeta_last = 0.0, kappa_last = 0.0;
  for (std::size_t k = 1; k <= cap && !(zeta_done && kappa_done); ++k) {
    const double kk = static_cast<double>(k), rk = std::sqrt(kk);
    if (!zeta_done) {
      // P_inf(Z_k > 0) + P_0(Z_k <= 0), Z_k ~ N(k a, k b^2)
      zeta_last = (normal_cdf(rk * pre.a / bp) + normal_cdf(-rk * post.a / bq)) / kk;
      zeta_sum += zeta_last;
      zeta_terms = k;
      if (!fixed && zeta_last < kSeriesTermTolerance) zeta_done = true;
    }
    if (!kappa_done) {
      kappa_last = normal_negative_part_mean(kk * post.a, rk * bq) / kk;
      kappa_sum += kappa_last;
      kappa_terms = k;
      if (!fixed && std::abs(kappa_last) < kSeriesTermTolerance) kappa_done = true;
    }
  }
  if (!fixed && (zeta_last >= kSeriesTermTolerance || std::abs(kappa_last) >= kSeriesTermTolerance))
    throw EstimationError("limiting_overshoots: series did not converge within " + std::to_string(cap) + " terms");

  Overshoots o;
  o.zeta = {std::exp(-zeta_sum) / i_g, 0.0, 0, zeta_terms};
  o.varkappa = {post.second_moment() / (2.0 * post.mean()) + kappa_sum, 0.0, 0, kappa_terms};
  return o;
}

}  // namespace detail

/// Monte Carlo evaluation of both series: each replication pairs one
/// pre-change and one post-change LLR walk of K steps.
inline Overshoots limiting_overshoots_mc(const GaussianChangeModel& m, const EstimationPolicy& policy) {
  policy.validate();
  const LlrLaw pre = llr_law_pre(m), post = llr_law_post(m);
  const double i_g = kl_numbers(m).i_g;
  const std::size_t K = policy.series_truncation.value_or(policy.horizon);
  std::vector<double> zeta_part(policy.replications), kappa_part(policy.replications);
  parallel_for(policy.replications, [&](std::size_t r) {
    RandomStream rng_pre(policy.seed, StreamPurpose::path_pre, r);
    RandomStream rng_post(policy.seed, StreamPurpose::path_post, r);
    double z_pre = 0.0, z_post = 0.0, sz = 0.0, sk = 0.0;
    for (std::size_t k = 1; k <= K; ++k) {
      z_pre += pre.sample(rng_pre);
      z_post += post.sample(rng_post);
      const double inv_k = 1.0 / static_cast<double>(k);
      sz += inv_k * ((z_pre > 0.0 ? 1.0 : 0.0) + (z_post <= 0.0 ? 1.0 : 0.0));
      sk += inv_k * std::min(0.0, z_post);
    }
    zeta_part[r] = sz;
    kappa_part[r] = sk;
  });
  const auto sz = summarize(zeta_part), sk = summarize(kappa_part);
  Overshoots o;
  const double zeta = std::exp(-sz.mean) / i_g;
  o.zeta = {zeta, zeta * sz.std_error, policy.replications, K};
  o.varkappa = {post.second_moment() / (2.0 * post.mean()) + sk.mean, sk.std_error, policy.replications, K};
  return o;
}

/// zeta and varkappa from their renewal series. Exact normal probabilities
/// are used when the LLR is Gaussian (equal variances); otherwise Monte Carlo.
inline Overshoots limiting_overshoots(const GaussianChangeModel& m, const EstimationPolicy& policy) {
  policy.validate();
  if (llr_law_post(m).gaussian()) return detail::overshoots_exact(m, policy);
  return limiting_overshoots_mc(m, policy);
}

/// Direct simulation at a finite level a: E_0[exp(-kappa_a)] and E_0[kappa_a]
/// where kappa_a is the excess of the post-change LLR walk over a.
inline Overshoots overshoot_at_level(const GaussianChangeModel& m, double level, std::size_t replications,
                                     std::uint64_t seed) {
  require(level >= 0.0, "overshoot_at_level: level must be nonnegative");
  const LlrLaw post = llr_law_post(m);
  std::vector<double> expo(replications), over(replications);
  parallel_for(replications, [&](std::size_t r) {
    RandomStream rng(seed, StreamPurpose::overshoot, r);
    double z = 0.0;
    do z += post.sample(rng);
    while (z < level);
    over[r] = z - level;
    expo[r] = std::exp(-over[r]);
  });
  const auto se = summarize(expo), so = summarize(over);
  return {{se.mean, se.std_error, replications, 0}, {so.mean, so.std_error, replications, 0}};
}

// ---------------------------------------------------------------------------
// Path functionals

struct PathFunctionals {
  Estimate beta0;
  Estimate beta_inf;
  Estimate c0;
  Estimate c_inf;
};

/// beta_0 = E_0[min_{n>=0} Z_n], beta_inf = lim E_inf[Z_n - min_{k<=n} Z_k],
/// C_0 = E[log(1+U)], C_inf = E[log(1+R_inf+U)] with U = sum_k exp(-Z_k)
/// under P_0 and R_inf drawn from the P_inf law of the SR statistic at the
/// horizon, independently of U. Each estimate is recomputed at half the
/// horizon; a significant difference means the horizon is too short.
inline PathFunctionals path_functionals(const GaussianChangeModel& m, const EstimationPolicy& policy) {
  policy.validate();
  const LlrLaw pre = llr_law_pre(m), post = llr_law_post(m);
  const std::size_t H = policy.horizon, half = H / 2;
  const std::size_t K = std::min(policy.series_truncation.value_or(H), H);
  const std::size_t K_half = std::min(K, half);
  const std::size_t R = policy.replications;

  std::vector<double> b0(R), b0h(R), binf(R), binfh(R), c0(R), c0h(R), cinf(R), cinfh(R);
  parallel_for(R, [&](std::size_t r) {
    // post-change walk: beta_0 and U
    RandomStream rng_post(policy.seed, StreamPurpose::path_post, r);
    double z = 0.0, zmin = 0.0, u = 0.0, u_half = 0.0, zmin_half = 0.0;
    for (std::size_t n = 1; n <= H; ++n) {
      z += post.sample(rng_post);
      zmin = std::min(zmin, z);
      if (n <= K) u += std::exp(-z);
      if (n == K_half) u_half = u;
      if (n == half) zmin_half = zmin;
    }
    b0[r] = zmin;
    b0h[r] = zmin_half;

    // pre-change walks: reflected walk for beta_inf, SR recursion for R_inf
    RandomStream rng_pre(policy.seed, StreamPurpose::path_pre, r);
    RandomStream rng_sr(policy.seed, StreamPurpose::path_sr, r);
    double w = 0.0, tail = 0.0, tail_half = 0.0, sr = 0.0, sr_half = 0.0;
    for (std::size_t n = 1; n <= H; ++n) {
      w = std::max(0.0, w + pre.sample(rng_pre));
      if (n > half) tail += w;
      if (n > H / 4 && n <= half) tail_half += w;
      sr = (1.0 + sr) * ratio_from_log(pre.sample(rng_sr));
      if (n == half) sr_half = sr;
    }
    binf[r] = tail / static_cast<double>(H - half);
    binfh[r] = tail_half / static_cast<double>(half - H / 4);
    c0[r] = std::log1p(u);
    c0h[r] = std::log1p(u_half);
    cinf[r] = std::log1p(sr + u);
    cinfh[r] = std::log1p(sr_half + u_half);
  });

  auto finish = [&](const std::vector<double>& full, const std::vector<double>& halfv, const char* name) {
    const auto s = summarize(full);
    std::vector<double> diff(R);
    for (std::size_t i = 0; i < R; ++i) diff[i] = full[i] - halfv[i];
    const auto d = summarize(diff);
    if (R >= 2 && std::abs(d.mean) > 4.0 * d.std_error + 1e-12 * (1.0 + std::abs(s.mean)))
      throw EstimationError(std::string("path_functionals: ") + name + " not stabilized at horizon " +
                            std::to_string(H) + " (half-horizon shift " + std::to_string(d.mean) + ")");
    return Estimate{s.mean, s.std_error, R, 0};
  };
  PathFunctionals out;
  out.beta0 = finish(b0, b0h, "beta0");
  out.beta_inf = finish(binf, binfh, "beta_inf");
  out.c0 = finish(c0, c0h, "C0");
  out.c0.terms = K;
  out.c_inf = finish(cinf, cinfh, "C_inf");
  out.c_inf.terms = K;
  return out;
}

inline RenewalConstants renewal_constants(const GaussianChangeModel& m, const EstimationPolicy& policy) {
  const auto kl = kl_numbers(m);
  const auto o = limiting_overshoots(m, policy);
  const auto p = path_functionals(m, policy);
  return {kl.i_f, kl.i_g, o.zeta, o.varkappa, p.beta0, p.beta_inf, p.c0, p.c_inf};
}

// ---------------------------------------------------------------------------
// Closed-form approximations

/// CUSUM: e^h/(I_g zeta^2) - h/I_f - 1/(I_g zeta). SR: A/zeta.
inline double arl_approx(DetectorKind kind, double threshold, const RenewalConstants& c) {
  require(threshold > 0.0, "arl_approx: threshold must be positive");
  const double z = c.zeta.value;
  if (kind == DetectorKind::sr) return threshold / z;
  return std::exp(threshold) / (c.i_g * z * z) - threshold / c.i_f - 1.0 / (c.i_g * z);
}

enum class DelayKind { cusum_sadd, cusum_add_inf, sr_sadd, sr_stadd };

/// Second-order delay expansions; CUSUM thresholds are h (log scale), SR
/// thresholds are A (linear scale, enters as log A).
inline double delay_approx(DelayKind kind, double threshold, const RenewalConstants& c) {
  require(threshold > 0.0, "delay_approx: threshold must be positive");
  const double k = c.varkappa.value;
  switch (kind) {
    case DelayKind::cusum_sadd: return (threshold + k + c.beta0.value) / c.i_g;
    case DelayKind::cusum_add_inf: return (threshold + k - c.beta_inf.value) / c.i_g;
    case DelayKind::sr_sadd: return (std::log(threshold) + k - c.c0.value) / c.i_g;
    case DelayKind::sr_stadd: return (std::log(threshold) + k - c.c_inf.value) / c.i_g;
  }
  return 0.0;
}

}  // namespace qcd
