#include <gtest/gtest.h>

#include <limits>

#include <cmath>
#include <numeric>

#include "afvol/garch.hpp"
#include "afvol/nelder_mead.hpp"
#include "afvol/random.hpp"

using namespace afvol;

namespace {

const GarchParams kTrue = GarchParams::garch11(0.1, 0.1, 0.8);

double sample_variance(const std::vector<double>& xs) {
  const double mu = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return s / static_cast<double>(xs.size());
}

}  // namespace

TEST(GarchFilter, HandRecursion) {
  // eps = [-1, 1] after demeaning with mean 0; sigma2[0] seeded with 1.
  const auto path = garch_filter(GarchParams::garch11(0.2, 0.3, 0.5), std::vector<double>{-1.0, 1.0}, GarchKind::garch,
                                 {0.0, 1.0});
  EXPECT_DOUBLE_EQ(path.sigma2[0], 1.0);
  EXPECT_DOUBLE_EQ(path.sigma2[1], 1.0);
}

TEST(GarchFilter, DefaultSeedIsSampleVarianceOfDemeanedReturns) {
  const std::vector<double> r{1.0, 3.0, 2.0, 6.0};
  const auto path = garch_filter(GarchParams::garch11(0.2, 0.3, 0.5), r, GarchKind::garch);
  EXPECT_DOUBLE_EQ(path.sigma2[0], sample_variance(r));
  EXPECT_DOUBLE_EQ(path.residuals[0], -2.0);
}

TEST(GarchFilter, GjrIndicator) {
  const GarchParams gjr = GarchParams::gjr11(0.2, 0.3, 0.2, 0.4);
  const GarchParams plain = GarchParams::garch11(0.2, 0.3, 0.4);
  const FilterOptions opts{0.0, 1.0};
  const std::vector<double> up{1.0, 0.5}, down{-1.0, 0.5};
  EXPECT_DOUBLE_EQ(garch_filter(gjr, up, GarchKind::gjr, opts).sigma2[1], garch_filter(plain, up, GarchKind::garch, opts).sigma2[1]);
  EXPECT_DOUBLE_EQ(garch_filter(gjr, down, GarchKind::gjr, opts).sigma2[1], 0.2 + (0.3 + 0.2) * 1.0 + 0.4 * 1.0);
}

TEST(GarchFilter, GjrWithZeroGammaEqualsGarch) {
  const auto r = garch_simulate(kTrue, 500, 3, GarchKind::garch).returns;
  const auto a = garch_filter(GarchParams::gjr11(0.1, 0.1, 0.0, 0.8), r, GarchKind::gjr);
  const auto b = garch_filter(kTrue, r, GarchKind::garch);
  EXPECT_EQ(a.sigma2, b.sigma2);
}

TEST(GarchFilter, ReproducesSimulatorVariances) {
  for (GarchKind kind : {GarchKind::garch, GarchKind::gjr}) {
    const GarchParams p = kind == GarchKind::gjr ? GarchParams::gjr11(0.1, 0.05, 0.1, 0.8) : kTrue;
    const auto sim = garch_simulate(p, 2000, 11, kind);
    const auto filt = garch_filter(p, sim.returns, kind, {0.0, unconditional_variance(p, kind)});
    EXPECT_EQ(filt.sigma2, sim.sigma2) << to_string(kind);
  }
}

TEST(GarchFilter, VariancesStayPositive) {
  Rng rng(4);
  std::vector<double> r(1000);
  for (double& x : r) x = 5.0 * rng.normal();
  const auto path = garch_filter(GarchParams::garch11(1e-8, 0.0, 0.99), r, GarchKind::garch);
  for (double s : path.sigma2) EXPECT_GT(s, 0.0);
}

TEST(GarchFilter, Errors) {
  EXPECT_THROW(garch_filter(kTrue, std::vector<double>{0.5}, GarchKind::garch), DataError);
  EXPECT_THROW(garch_filter(GarchParams::garch11(0.1, 0.5, 0.6), std::vector<double>{1, 2, 3}, GarchKind::garch),
               ConstraintError);
  EXPECT_THROW(garch_filter(GarchParams::garch11(-0.1, 0.1, 0.1), std::vector<double>{1, 2, 3}, GarchKind::garch),
               ConstraintError);
  EXPECT_THROW(garch_filter(kTrue, std::vector<double>{1, 1, 1}, GarchKind::garch), DataError);  // zero variance seed
}

TEST(GarchSimulate, DegenerateModelHasConstantVariance) {
  const auto path = garch_simulate(GarchParams::garch11(0.3, 0.0, 0.0), 100, 1, GarchKind::garch);
  for (double s : path.sigma2) EXPECT_EQ(s, 0.3);
  const auto gjr = garch_simulate(GarchParams::gjr11(0.3, 0.0, 0.0, 0.0), 100, 1, GarchKind::gjr);
  for (double s : gjr.sigma2) EXPECT_EQ(s, 0.3);
}

TEST(GarchSimulate, SeedDeterminism) {
  const auto a = garch_simulate(kTrue, 300, 99, GarchKind::garch);
  const auto b = garch_simulate(kTrue, 300, 99, GarchKind::garch);
  const auto c = garch_simulate(kTrue, 300, 100, GarchKind::garch);
  EXPECT_EQ(a.returns, b.returns);
  EXPECT_EQ(a.sigma2, b.sigma2);
  EXPECT_NE(a.returns, c.returns);
}

TEST(GarchSimulate, MonteCarloVarianceMatchesUnconditional) {
  const auto path = garch_simulate(kTrue, 100000, 2024, GarchKind::garch);
  EXPECT_NEAR(sample_variance(path.returns), 1.0, 0.05);
}

TEST(GarchSimulate, RejectsNonStationary) {
  EXPECT_THROW(garch_simulate(GarchParams::garch11(0.1, 0.3, 0.7), 10, 1, GarchKind::garch), ConstraintError);
  EXPECT_THROW(garch_simulate(GarchParams::gjr11(0.1, 0.1, 0.4, 0.75), 10, 1, GarchKind::gjr), ConstraintError);
}

TEST(UnconditionalVariance, ClosedForms) {
  // 0.1 and 0.8 are not binary fractions, so the closed form lands a few ulps from 1.
  const double ulp = std::numeric_limits<double>::epsilon();
  EXPECT_NEAR(unconditional_variance(kTrue, GarchKind::garch), 1.0, 4 * ulp);
  EXPECT_NEAR(unconditional_variance(GarchParams::gjr11(0.1, 0.05, 0.1, 0.8), GarchKind::gjr), 1.0, 8 * ulp);
  EXPECT_EQ(unconditional_variance(GarchParams::garch11(0.25, 0.25, 0.5), GarchKind::garch), 1.0);
  EXPECT_THROW(unconditional_variance(GarchParams::garch11(0.1, 0.2, 0.8), GarchKind::garch), ConstraintError);
}

TEST(UnconditionalVariance, GrowsAsPersistenceApproachesOne) {
  double prev = 0.0;
  for (double beta : {0.5, 0.8, 0.89, 0.899, 0.8999}) {
    const double v = unconditional_variance(GarchParams::garch11(0.1, 0.1, beta), GarchKind::garch);
    EXPECT_GT(v, prev);
    prev = v;
  }
  EXPECT_GT(prev, 900.0);
}

TEST(ForecastSigma, HandAndDegenerate) {
  VolatilityPath path{{1.0}, {1.0}, {1.0}};
  EXPECT_DOUBLE_EQ(forecast_sigma(GarchParams::garch11(0.2, 0.3, 0.5), path, GarchKind::garch), 1.0);
  VolatilityPath other{{7.0, 2.0}, {3.0, -4.0}, {3.0, -4.0}};
  EXPECT_DOUBLE_EQ(forecast_sigma(GarchParams::garch11(0.25, 0.0, 0.0), other, GarchKind::garch), 0.5);
}

TEST(ForecastSigma, ConsistentWithFilterExtension) {
  const auto r = garch_simulate(kTrue, 400, 8, GarchKind::garch).returns;
  const FilterOptions opts{0.0, 1.0};
  const std::vector<double> head(r.begin(), r.end() - 1);
  const double f = forecast_sigma(kTrue, garch_filter(kTrue, head, GarchKind::garch, opts), GarchKind::garch);
  EXPECT_DOUBLE_EQ(f * f, garch_filter(kTrue, r, GarchKind::garch, opts).sigma2.back());
}

TEST(FitMle, RecoversSimulatedParameters) {
  const auto r = garch_simulate(kTrue, 5000, 7, GarchKind::garch).returns;
  const GarchFit fit = fit_mle(r, GarchKind::garch);
  EXPECT_NEAR(fit.params.omega, 0.1, 0.05);
  EXPECT_NEAR(fit.params.alpha[0], 0.1, 0.05);
  EXPECT_NEAR(fit.params.beta[0], 0.8, 0.05);
  EXPECT_GE(fit.loglik, log_likelihood(kTrue, r, GarchKind::garch, fit.filter_options()) - 1e-6);
  EXPECT_NEAR(fit.loglik, log_likelihood(fit.params, r, GarchKind::garch, fit.filter_options()), 1e-9);
  // Refit model keeps the unconditional variance within 15%.
  EXPECT_NEAR(unconditional_variance(fit.params, GarchKind::garch), 1.0, 0.15);
}

TEST(FitMle, GjrRecoversSimulatedParameters) {
  const GarchParams truth = GarchParams::gjr11(0.1, 0.05, 0.1, 0.8);
  const auto r = garch_simulate(truth, 5000, 7, GarchKind::gjr).returns;
  const GarchFit fit = fit_mle(r, GarchKind::gjr);
  EXPECT_NEAR(fit.params.omega, 0.1, 0.05);
  EXPECT_NEAR(fit.params.alpha[0], 0.05, 0.05);
  EXPECT_NEAR(fit.params.gamma[0], 0.1, 0.07);
  EXPECT_NEAR(fit.params.beta[0], 0.8, 0.05);
  EXPECT_GE(fit.loglik, log_likelihood(truth, r, GarchKind::gjr, fit.filter_options()) - 1e-6);
}

TEST(FitMle, IidNormalReturns) {
  // With alpha ~ 0 the ARCH term vanishes and beta is not identified, so only
  // alpha and the implied unconditional variance are pinned down.
  Rng rng(12345);
  std::vector<double> r(5000);
  for (double& x : r) x = rng.normal();
  const GarchFit fit = fit_mle(r, GarchKind::garch);
  EXPECT_LT(fit.params.alpha[0], 0.03);
  EXPECT_NEAR(unconditional_variance(fit.params, GarchKind::garch), 1.0, 0.1);
}

TEST(FitMle, IsDeterministic) {
  const auto r = garch_simulate(kTrue, 1000, 5, GarchKind::garch).returns;
  const GarchFit a = fit_mle(r, GarchKind::garch);
  const GarchFit b = fit_mle(r, GarchKind::garch);
  EXPECT_EQ(a.params.omega, b.params.omega);
  EXPECT_EQ(a.params.beta, b.params.beta);
  EXPECT_EQ(a.loglik, b.loglik);
}

TEST(FitMle, DegenerateInputs) {
  EXPECT_THROW(fit_mle(std::vector<double>(49, 0.1), GarchKind::garch), DataError);
  EXPECT_THROW(fit_mle(std::vector<double>(200, 0.0), GarchKind::garch), DataError);
  std::vector<double> bad(100, 0.1);
  bad[10] = std::nan("");
  EXPECT_THROW(fit_mle(bad, GarchKind::garch), DataError);
}

TEST(FitMle, FailureCarriesBestPoint) {
  FitOptions opts;
  opts.optimizer.max_evaluations = 1;
  opts.optimizer.restarts = 0;
  const auto r = garch_simulate(kTrue, 500, 5, GarchKind::garch).returns;
  try {
    fit_mle(r, GarchKind::garch, opts);
    FAIL() << "expected FitError";
  } catch (const FitError& e) {
    EXPECT_EQ(e.best_point().size(), 3u);
    EXPECT_TRUE(std::isfinite(e.best_value()));
  }
}

TEST(NelderMead, MinimisesRosenbrock) {
  auto f = [](const std::vector<double>& x) {
    return 100.0 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1.0 - x[0], 2);
  };
  NelderMeadOptions opts;
  opts.f_tolerance = 1e-16;
  opts.x_tolerance = 1e-12;
  const auto res = nelder_mead(f, {-1.2, 1.0}, opts);
  EXPECT_NEAR(res.x[0], 1.0, 1e-5);
  EXPECT_NEAR(res.x[1], 1.0, 1e-5);
}

TEST(Validate, GjrStationarityUsesHalfGamma) {
  EXPECT_NO_THROW(validate(GarchParams::gjr11(0.1, 0.1, 0.19, 0.8), GarchKind::gjr));
  EXPECT_THROW(validate(GarchParams::gjr11(0.1, 0.1, 0.21, 0.8), GarchKind::gjr), ConstraintError);
  EXPECT_THROW(validate(GarchParams::garch11(0.1, -0.1, 0.5), GarchKind::garch), ConstraintError);
}
