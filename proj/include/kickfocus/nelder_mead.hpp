#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace kickfocus {

struct Box {
  std::vector<double> lower;
  std::vector<double> upper;
};

struct NelderMeadOptions {
  int max_evaluations = 500;
  double f_tolerance = 1e-15;  // spread of simplex values
  double x_tolerance = 1e-10;  // simplex diameter
  std::vector<double> initial_step;  // defaults to 5% of |x0| (or 1e-3)
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = false;
};

/// Minimizes `f` with the downhill simplex method. Points proposed outside
/// `box` are clamped onto it. The incumbent (best point evaluated) is always
/// returned, including on budget exhaustion.
template <class F>
NelderMeadResult nelder_mead(F&& f, std::vector<double> x0, const NelderMeadOptions& opt = {},
                             const std::optional<Box>& box = std::nullopt) {
  const std::size_t n = x0.size();
  if (n == 0) throw std::invalid_argument("nelder_mead: empty parameter vector");
  if (opt.max_evaluations < 1) throw std::invalid_argument("nelder_mead: budget must be >= 1");

  auto clamp = [&](std::vector<double>& x) {
    if (!box) return;
    for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], box->lower[i], box->upper[i]);
  };

  NelderMeadResult best;
  auto eval = [&](std::vector<double> x) {
    clamp(x);
    const double v = f(x);
    ++best.evaluations;
    if (v < best.value || best.x.empty()) {
      best.value = v;
      best.x = x;
    }
    return std::pair{std::move(x), v};
  };

  std::vector<std::vector<double>> simplex;
  std::vector<double> values;
  clamp(x0);
  {
    auto [x, v] = eval(x0);
    simplex.push_back(std::move(x));
    values.push_back(v);
  }
  for (std::size_t i = 0; i < n && best.evaluations < opt.max_evaluations; ++i) {
    std::vector<double> x = x0;
    double step = opt.initial_step.size() == n
                      ? opt.initial_step[i]
                      : (x0[i] != 0.0 ? 0.05 * std::abs(x0[i]) : 1e-3);
    if (box && x[i] + step > box->upper[i]) step = -step;
    x[i] += step;
    auto [xc, v] = eval(x);
    simplex.push_back(std::move(xc));
    values.push_back(v);
  }
  if (simplex.size() < n + 1) return best;

  // Adaptive coefficients (Gao & Han) behave better in higher dimension.
  const double dn = static_cast<double>(n);
  const double alpha = 1.0;
  const double beta = 1.0 + 2.0 / dn;
  const double gamma = 0.75 - 1.0 / (2.0 * dn);
  const double delta = 1.0 - 1.0 / dn;

  std::vector<std::size_t> order(n + 1);
  while (best.evaluations < opt.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t lo = order.front();
    const std::size_t hi = order.back();
    const std::size_t second = order[n - 1];

    double diameter = 0.0;
    for (std::size_t j = 0; j <= n; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        diameter = std::max(diameter, std::abs(simplex[j][i] - simplex[lo][i]));
      }
    }
    if (values[hi] - values[lo] <= opt.f_tolerance && diameter <= opt.x_tolerance) {
      best.converged = true;
      break;
    }
    if (diameter <= opt.x_tolerance * 1e-3) {
      best.converged = true;
      break;
    }

    std::vector<double> centroid(n, 0.0);
    for (std::size_t j = 0; j <= n; ++j) {
      if (j == hi) continue;
      for (std::size_t i = 0; i < n; ++i) centroid[i] += simplex[j][i] / dn;
    }
    auto along = [&](double t) {
      std::vector<double> x(n);
      for (std::size_t i = 0; i < n; ++i) x[i] = centroid[i] + t * (simplex[hi][i] - centroid[i]);
      return x;
    };

    auto [xr, fr] = eval(along(-alpha));
    if (fr < values[lo]) {
      if (best.evaluations >= opt.max_evaluations) {
        simplex[hi] = xr;
        values[hi] = fr;
        break;
      }
      auto [xe, fe] = eval(along(-alpha * beta));
      if (fe < fr) {
        simplex[hi] = std::move(xe);
        values[hi] = fe;
      } else {
        simplex[hi] = std::move(xr);
        values[hi] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[hi] = std::move(xr);
      values[hi] = fr;
      continue;
    }
    if (best.evaluations >= opt.max_evaluations) break;
    const bool outside = fr < values[hi];
    auto [xc, fc] = eval(along(outside ? -gamma : gamma));
    if (fc < std::min(fr, values[hi])) {
      simplex[hi] = std::move(xc);
      values[hi] = fc;
      continue;
    }
    for (std::size_t j = 0; j <= n && best.evaluations < opt.max_evaluations; ++j) {
      if (j == lo) continue;
      std::vector<double> x(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = simplex[lo][i] + delta * (simplex[j][i] - simplex[lo][i]);
      }
      auto [xs, fs] = eval(std::move(x));
      simplex[j] = std::move(xs);
      values[j] = fs;
    }
  }
  return best;
}

}  // namespace kickfocus
