#pragma once

// GARCH(P,Q) and GJR-GARCH(P,Q) conditional-variance models with Gaussian
// maximum-likelihood estimation.
//
//   sigma2[t] = omega + sum_p (alpha_p + gamma_p * 1{eps[t-p] < 0}) * eps[t-p]^2
//                     + sum_q beta_q * sigma2[t-q]
//
// gamma is only read for GarchKind::gjr. The first max(P,Q) variances are
// seeded with an initial variance (by default the sample variance).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "afvol/error.hpp"
#include "afvol/nelder_mead.hpp"
#include "afvol/random.hpp"

namespace afvol {

enum class GarchKind { garch, gjr };

inline std::string_view to_string(GarchKind kind) { return kind == GarchKind::gjr ? "gjr" : "garch"; }

inline GarchKind parse_garch_kind(std::string_view s) {
  if (s == "garch") return GarchKind::garch;
  if (s == "gjr") return GarchKind::gjr;
  throw ConfigError("unknown GARCH kind '" + std::string(s) + "' (expected garch or gjr)");
}

struct GarchParams {
  double omega = 0.0;
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> gamma;  // GJR leverage terms, same length as alpha

  static GarchParams garch11(double omega, double alpha, double beta) { return {omega, {alpha}, {beta}, {}}; }
  static GarchParams gjr11(double omega, double alpha, double gamma, double beta) {
    return {omega, {alpha}, {beta}, {gamma}};
  }

  std::size_t p() const noexcept { return alpha.size(); }
  std::size_t q() const noexcept { return beta.size(); }
  std::size_t max_lag() const noexcept { return std::max(p(), q()); }
};

/// sum(alpha) + sum(beta), plus sum(gamma)/2 for GJR.
inline double persistence(const GarchParams& params, GarchKind kind) {
  double s = 0.0;
  for (double a : params.alpha) s += a;
  for (double b : params.beta) s += b;
  if (kind == GarchKind::gjr)
    for (double g : params.gamma) s += 0.5 * g;
  return s;
}

inline void validate(const GarchParams& params, GarchKind kind) {
  if (!(params.omega > 0.0) || !std::isfinite(params.omega)) {
    throw ConstraintError("omega must be positive and finite, got " + std::to_string(params.omega));
  }
  if (params.alpha.empty()) throw ConstraintError("at least one alpha lag is required");
  for (double a : params.alpha)
    if (!(a >= 0.0)) throw ConstraintError("alpha terms must be non-negative");
  for (double b : params.beta)
    if (!(b >= 0.0)) throw ConstraintError("beta terms must be non-negative");
  if (kind == GarchKind::gjr) {
    if (params.gamma.size() != params.alpha.size()) {
      throw ConstraintError("GJR model needs one gamma per alpha lag");
    }
    for (std::size_t i = 0; i < params.gamma.size(); ++i) {
      if (!std::isfinite(params.gamma[i]) || params.alpha[i] + params.gamma[i] < 0.0) {
        throw ConstraintError("alpha + gamma must be non-negative for every lag");
      }
    }
  }
  const double s = persistence(params, kind);
  if (!(s < 1.0)) {
    throw ConstraintError("non-stationary parameters: persistence " + std::to_string(s) + " >= 1");
  }
}

/// Long-run variance omega / (1 - persistence).
inline double unconditional_variance(const GarchParams& params, GarchKind kind) {
  const double denom = 1.0 - persistence(params, kind);
  if (!(denom > 0.0)) {
    throw ConstraintError("unconditional variance undefined: 1 - persistence = " + std::to_string(denom));
  }
  return params.omega / denom;
}

struct VolatilityPath {
  std::vector<double> sigma2;
  std::vector<double> residuals;
  std::vector<double> returns;
};

struct FilterOptions {
  /// Mean removed from returns; sample mean when empty.
  std::optional<double> mean;
  /// Seed for the first max(P,Q) variances; mean squared residual when empty.
  std::optional<double> initial_variance;
};

namespace detail {

/// Variance at `t` given residuals and variances before t.
inline double next_variance(const GarchParams& p, GarchKind kind, std::span<const double> eps,
                            std::span<const double> sigma2, std::size_t t) {
  double v = p.omega;
  for (std::size_t i = 0; i < p.alpha.size(); ++i) {
    const double e = eps[t - 1 - i];
    double coef = p.alpha[i];
    if (kind == GarchKind::gjr && e < 0.0) coef += p.gamma[i];
    v += coef * e * e;
  }
  for (std::size_t j = 0; j < p.beta.size(); ++j) v += p.beta[j] * sigma2[t - 1 - j];
  return v;
}

inline void run_recursion(const GarchParams& p, GarchKind kind, std::span<const double> eps, double initial,
                          std::span<double> sigma2) {
  const std::size_t lag = p.max_lag();
  for (std::size_t t = 0; t < eps.size(); ++t) {
    sigma2[t] = t < lag ? initial : next_variance(p, kind, eps, sigma2, t);
  }
}

inline double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double gaussian_loglik(std::span<const double> eps, std::span<const double> sigma2) {
  constexpr double log_2pi = 1.8378770664093454836;  // ln(2*pi)
  double ll = 0.0;
  for (std::size_t t = 0; t < eps.size(); ++t) ll += log_2pi + std::log(sigma2[t]) + eps[t] * eps[t] / sigma2[t];
  return -0.5 * ll;
}

}  // namespace detail

inline VolatilityPath garch_filter(const GarchParams& params, std::span<const double> returns, GarchKind kind,
                                   const FilterOptions& opts = {}) {
  validate(params, kind);
  if (returns.size() <= params.max_lag()) {
    throw DataError("garch_filter needs more than " + std::to_string(params.max_lag()) + " returns, got " +
                    std::to_string(returns.size()));
  }
  VolatilityPath path;
  path.returns.assign(returns.begin(), returns.end());
  const double mu = opts.mean.value_or(detail::mean_of(returns));
  path.residuals.resize(returns.size());
  for (std::size_t t = 0; t < returns.size(); ++t) path.residuals[t] = returns[t] - mu;
  double v0 = 0.0;
  if (opts.initial_variance) {
    v0 = *opts.initial_variance;
  } else {
    for (double e : path.residuals) v0 += e * e;
    v0 /= static_cast<double>(returns.size());
  }
  if (!(v0 > 0.0) || !std::isfinite(v0)) {
    throw DataError("initial variance must be positive and finite, got " + std::to_string(v0));
  }
  path.sigma2.resize(returns.size());
  detail::run_recursion(params, kind, path.residuals, v0, path.sigma2);
  return path;
}

/// Gaussian log-likelihood -1/2 sum(log 2pi + log sigma2 + eps^2 / sigma2).
inline double log_likelihood(const VolatilityPath& path) {
  return detail::gaussian_loglik(path.residuals, path.sigma2);
}

inline double log_likelihood(const GarchParams& params, std::span<const double> returns, GarchKind kind,
                             const FilterOptions& opts = {}) {
  return log_likelihood(garch_filter(params, returns, kind, opts));
}

/// Simulates r[t] = sigma[t] * z[t] with z i.i.d. standard normal drawn from
/// Rng(seed). The first max(P,Q) variances equal the unconditional variance.
inline VolatilityPath garch_simulate(const GarchParams& params, std::size_t n, std::uint64_t seed, GarchKind kind) {
  validate(params, kind);
  if (n == 0) throw DataError("garch_simulate needs n >= 1");
  const double v0 = unconditional_variance(params, kind);
  Rng rng(seed);
  VolatilityPath path;
  path.sigma2.resize(n);
  path.returns.resize(n);
  const std::size_t lag = params.max_lag();
  for (std::size_t t = 0; t < n; ++t) {
    path.sigma2[t] = t < lag ? v0 : detail::next_variance(params, kind, path.returns, path.sigma2, t);
    path.returns[t] = std::sqrt(path.sigma2[t]) * rng.normal();
  }
  path.residuals = path.returns;
  return path;
}

/// One-step-ahead conditional volatility following the last observation of
/// `path`.
inline double forecast_sigma(const GarchParams& params, const VolatilityPath& path, GarchKind kind) {
  validate(params, kind);
  const std::size_t n = path.residuals.size();
  if (n < params.max_lag() || path.sigma2.size() != n) {
    throw DataError("forecast_sigma: path too short for model lags");
  }
  return std::sqrt(detail::next_variance(params, kind, path.residuals, path.sigma2, n));
}

struct FitOptions {
  NelderMeadOptions optimizer{};
  std::size_t min_observations = 50;
};

/// Fitted order-(1,1) model plus the filter settings it was estimated with,
/// so it can be replayed over longer series without re-estimating them.
struct GarchFit {
  GarchKind kind = GarchKind::garch;
  GarchParams params;
  double loglik = 0.0;
  double mean = 0.0;
  double initial_variance = 0.0;
  std::size_t evaluations = 0;

  FilterOptions filter_options() const { return {mean, initial_variance}; }
};

namespace detail {

// Unconstrained coordinates: (log omega, u_alpha, u_beta[, u_gamma]).
// alpha = e^u_a / D, beta = e^u_b / D, gamma / 2 = e^u_g / D with
// D = 1 + sum(e^u), so persistence = 1 - 1/D < 1 always holds.
inline GarchParams from_unconstrained(std::span<const double> theta, GarchKind kind) {
  const double ea = std::exp(theta[1]);
  const double eb = std::exp(theta[2]);
  const double eg = kind == GarchKind::gjr ? std::exp(theta[3]) : 0.0;
  const double d = 1.0 + ea + eb + eg;
  GarchParams p = GarchParams::garch11(std::exp(theta[0]), ea / d, eb / d);
  if (kind == GarchKind::gjr) p.gamma = {2.0 * eg / d};
  return p;
}

inline std::vector<double> to_unconstrained(const GarchParams& p, GarchKind kind) {
  const double slack = 1.0 - persistence(p, kind);
  std::vector<double> theta{std::log(p.omega), std::log(p.alpha[0] / slack), std::log(p.beta[0] / slack)};
  if (kind == GarchKind::gjr) theta.push_back(std::log(0.5 * p.gamma[0] / slack));
  return theta;
}

}  // namespace detail

/// Gaussian maximum-likelihood estimate of a GARCH(1,1) or GJR-GARCH(1,1)
/// model. Returns are demeaned with their sample mean and the recursion is
/// seeded with their sample variance. Search starts at omega = 0.1 var,
/// alpha = 0.1, beta = 0.8 (GJR: alpha = 0.05, gamma = 0.1).
inline GarchFit fit_mle(std::span<const double> returns, GarchKind kind, const FitOptions& opts = {}) {
  if (returns.size() < opts.min_observations) {
    throw DataError("fit_mle needs at least " + std::to_string(opts.min_observations) + " returns, got " +
                    std::to_string(returns.size()));
  }
  for (std::size_t i = 0; i < returns.size(); ++i) {
    if (!std::isfinite(returns[i])) throw DataError("non-finite return at index " + std::to_string(i));
  }
  const double mu = detail::mean_of(returns);
  std::vector<double> eps(returns.size());
  double var = 0.0;
  for (std::size_t t = 0; t < returns.size(); ++t) {
    eps[t] = returns[t] - mu;
    var += eps[t] * eps[t];
  }
  var /= static_cast<double>(returns.size());
  if (!(var > 1e-300)) throw DataError("degenerate returns: zero variance (constant prices?)");

  std::vector<double> sigma2(returns.size());
  auto objective = [&](const std::vector<double>& theta) {
    for (double v : theta)
      if (!std::isfinite(v) || std::abs(v) > 700.0) return HUGE_VAL;
    const GarchParams p = detail::from_unconstrained(theta, kind);
    detail::run_recursion(p, kind, eps, var, sigma2);
    return -detail::gaussian_loglik(eps, sigma2);
  };

  const GarchParams start =
      kind == GarchKind::gjr ? GarchParams::gjr11(0.1 * var, 0.05, 0.1, 0.8) : GarchParams::garch11(0.1 * var, 0.1, 0.8);
  const std::vector<double> theta0 = detail::to_unconstrained(start, kind);
  const double start_value = objective(theta0);
  const NelderMeadResult nm = nelder_mead(objective, theta0, opts.optimizer);
  if (!std::isfinite(nm.value) || !(nm.value < start_value)) {
    throw FitError("GARCH likelihood search failed to improve on its starting point (best -loglik " +
                       std::to_string(nm.value) + ")",
                   nm.x, nm.value);
  }
  GarchFit fit;
  fit.kind = kind;
  fit.params = detail::from_unconstrained(nm.x, kind);
  fit.loglik = -nm.value;
  fit.mean = mu;
  fit.initial_variance = var;
  fit.evaluations = nm.evaluations;
  return fit;
}

}  // namespace afvol
