#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace afvol {

struct NelderMeadOptions {
  std::size_t max_evaluations = 20000;
  /// Stop when the spread of simplex values falls below this.
  double f_tolerance = 1e-11;
  /// ...and the simplex diameter falls below this.
  double x_tolerance = 1e-9;
  double initial_step = 0.25;
  /// Fresh simplices built around the incumbent after convergence. Plain
  /// Nelder-Mead can stall on a non-stationary point; restarting fixes most
  /// such stalls in low dimension.
  std::size_t restarts = 4;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;
  bool converged = false;
};

/// Minimises `f` with the Nelder-Mead simplex method (reflection 1,
/// expansion 2, contraction 1/2, shrink 1/2). Non-finite objective values
/// are treated as +inf, which lets callers reject infeasible points.
template <class Objective>
NelderMeadResult nelder_mead(Objective&& f, std::vector<double> start, const NelderMeadOptions& opts = {}) {
  const std::size_t n = start.size();
  NelderMeadResult result;
  auto eval = [&](const std::vector<double>& x) {
    ++result.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  result.x = start;
  result.value = eval(start);

  for (std::size_t round = 0; round <= opts.restarts; ++round) {
    std::vector<std::vector<double>> pts(n + 1, result.x);
    std::vector<double> vals(n + 1, result.value);
    for (std::size_t i = 0; i < n; ++i) {
      pts[i + 1][i] += opts.initial_step;
      vals[i + 1] = eval(pts[i + 1]);
    }
    std::vector<std::size_t> order(n + 1);
    std::vector<double> centroid(n), trial(n), trial2(n);
    bool converged = false;

    while (result.evaluations < opts.max_evaluations) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
      const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

      double diameter = 0.0;
      for (std::size_t i = 0; i <= n; ++i)
        for (std::size_t j = 0; j < n; ++j) diameter = std::max(diameter, std::abs(pts[i][j] - pts[best][j]));
      if (std::abs(vals[worst] - vals[best]) <= opts.f_tolerance && diameter <= opts.x_tolerance) {
        converged = true;
        break;
      }

      std::fill(centroid.begin(), centroid.end(), 0.0);
      for (std::size_t i = 0; i <= n; ++i) {
        if (i == worst) continue;
        for (std::size_t j = 0; j < n; ++j) centroid[j] += pts[i][j] / static_cast<double>(n);
      }
      auto along = [&](double coef, std::vector<double>& out) {
        for (std::size_t j = 0; j < n; ++j) out[j] = centroid[j] + coef * (pts[worst][j] - centroid[j]);
      };

      along(-1.0, trial);
      const double fr = eval(trial);
      if (fr < vals[best]) {
        along(-2.0, trial2);
        const double fe = eval(trial2);
        if (fe < fr) {
          pts[worst] = trial2;
          vals[worst] = fe;
        } else {
          pts[worst] = trial;
          vals[worst] = fr;
        }
        continue;
      }
      if (fr < vals[second]) {
        pts[worst] = trial;
        vals[worst] = fr;
        continue;
      }
      const bool outside = fr < vals[worst];
      along(outside ? -0.5 : 0.5, trial2);
      const double fc = eval(trial2);
      if (fc < (outside ? fr : vals[worst])) {
        pts[worst] = trial2;
        vals[worst] = fc;
        continue;
      }
      for (std::size_t i = 0; i <= n; ++i) {
        if (i == best) continue;
        for (std::size_t j = 0; j < n; ++j) pts[i][j] = pts[best][j] + 0.5 * (pts[i][j] - pts[best][j]);
        vals[i] = eval(pts[i]);
      }
    }

    const auto best_it = std::min_element(vals.begin(), vals.end());
    const double improvement = result.value - *best_it;
    if (*best_it <= result.value) {
      result.x = pts[static_cast<std::size_t>(best_it - vals.begin())];
      result.value = *best_it;
    }
    result.converged = converged;
    if (!converged || (round > 0 && improvement <= opts.f_tolerance)) break;
  }
  return result;
}

}  // namespace afvol
