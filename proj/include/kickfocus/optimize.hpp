#pragma once

// Displacement adjustment: the simulated kick is compared against the best
// member of the target family exp(-i (pi/2) A(phase_eff)) built with eta_eff
// (re-targeting), or the applied pulses are pre-compensated in area and phase
// and compared against the fixed nominal target.

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "kickfocus/fidelity.hpp"
#include "kickfocus/hilbert.hpp"
#include "kickfocus/nelder_mead.hpp"

namespace kickfocus {

enum class AdjustmentMode { retarget, precompensate };

struct AdjustmentResult {
  AdjustmentMode mode = AdjustmentMode::retarget;
  double eta_eff = 0.0;
  double phase_eff = 0.0;
  double area_scale = 1.0;  // precompensate only
  double fidelity_before = 0.0;
  double fidelity_after = 0.0;
  int evaluations = 0;
  bool budget_exhausted = false;

  double infidelity_before() const { return 1.0 - fidelity_before; }
  double infidelity_after() const { return 1.0 - fidelity_after; }
};

inline constexpr int default_adjustment_budget = 500;

namespace detail {

// Fidelity against exp(-i (pi/2) A(phase)) using only the evaluated columns.
class SdkTargetFidelity {
 public:
  SdkTargetFidelity(const ComplexMatrix& u_sim, const HilbertSpace& space, int eval_fock_levels)
      : space_(space), levels_(eval_fock_levels) {
    if (u_sim.rows() != space.dim() || u_sim.cols() != space.dim()) {
      throw std::invalid_argument("adjust_displacement: u_sim does not match the space");
    }
    if (eval_fock_levels < 1 || eval_fock_levels > space.fock_cutoff()) {
      throw std::invalid_argument("adjust_displacement: bad eval_fock_levels");
    }
    cols_.resize(space.dim(), space.spin_dim() * eval_fock_levels);
    int j = 0;
    for (int s = 0; s < space.spin_dim(); ++s) {
      for (int n = 0; n < eval_fock_levels; ++n) cols_.col(j++) = u_sim.col(space.index(s, n));
    }
  }

  double operator()(double eta, double phase) const {
    const ComplexMatrix t = target_sdk(space_, eta, phase);
    Complex acc = 0.0;
    int j = 0;
    for (int s = 0; s < space_.spin_dim(); ++s) {
      for (int n = 0; n < levels_; ++n) acc += t.col(space_.index(s, n)).dot(cols_.col(j++));
    }
    return std::abs(acc) / static_cast<double>(cols_.cols());
  }

 private:
  HilbertSpace space_;
  int levels_;
  ComplexMatrix cols_;
};

}  // namespace detail

/// Maximizes process_fidelity(u_sim, target_sdk(space, eta_eff, phase_eff))
/// from (eta_nominal, 0) with a bounded simplex search.
inline AdjustmentResult adjust_displacement(const ComplexMatrix& u_sim, const HilbertSpace& space,
                                            double eta_nominal,
                                            int budget = default_adjustment_budget,
                                            int eval_fock_levels = default_eval_fock_levels,
                                            std::vector<double> start = {}) {
  if (budget < 50) throw std::invalid_argument("adjust_displacement: budget must be >= 50");
  if (!std::isfinite(eta_nominal) || eta_nominal < 0.0) {
    throw std::invalid_argument("adjust_displacement: eta_nominal must be finite and >= 0");
  }
  const detail::SdkTargetFidelity fidelity(u_sim, space, eval_fock_levels);
  const double eta_hi = eta_nominal > 0.0 ? 3.0 * eta_nominal : 0.3;
  const Box box{{0.0, -std::numbers::pi}, {eta_hi, std::numbers::pi}};
  if (start.empty()) start = {eta_nominal, 0.0};

  AdjustmentResult r;
  r.fidelity_before = fidelity(eta_nominal, 0.0);
  NelderMeadOptions nm;
  nm.max_evaluations = budget - 1;
  nm.initial_step = {eta_nominal > 0.0 ? 0.02 * eta_nominal : 1e-3, 1e-3};
  nm.f_tolerance = 1e-16;
  nm.x_tolerance = 1e-12;
  const auto best = nelder_mead(
      [&](const std::vector<double>& x) { return 1.0 - fidelity(x[0], x[1]); }, start, nm, box);

  r.evaluations = best.evaluations + 1;
  r.budget_exhausted = !best.converged;
  if (1.0 - best.value >= r.fidelity_before) {
    r.eta_eff = best.x[0];
    r.phase_eff = best.x[1];
    r.fidelity_after = 1.0 - best.value;
  } else {
    r.eta_eff = eta_nominal;
    r.phase_eff = 0.0;
    r.fidelity_after = r.fidelity_before;
  }
  return r;
}

/// Pre-compensation: `simulate(area_scale, phase_offset)` returns the applied
/// propagator; it is compared against the fixed `target`.
inline AdjustmentResult precompensate_pulses(
    const std::function<ComplexMatrix(double area_scale, double phase_offset)>& simulate,
    const ComplexMatrix& target, const HilbertSpace& space, int budget = default_adjustment_budget,
    int eval_fock_levels = default_eval_fock_levels) {
  if (budget < 50) throw std::invalid_argument("precompensate_pulses: budget must be >= 50");
  auto fid = [&](double scale, double phase) {
    return process_fidelity(simulate(scale, phase), target, space, eval_fock_levels).fidelity;
  };
  AdjustmentResult r;
  r.mode = AdjustmentMode::precompensate;
  r.fidelity_before = fid(1.0, 0.0);
  NelderMeadOptions nm;
  nm.max_evaluations = budget - 1;
  nm.initial_step = {1e-3, 1e-3};
  nm.f_tolerance = 1e-16;
  nm.x_tolerance = 1e-12;
  const Box box{{0.5, -std::numbers::pi}, {1.5, std::numbers::pi}};
  const auto best = nelder_mead(
      [&](const std::vector<double>& x) { return 1.0 - fid(x[0], x[1]); }, {1.0, 0.0}, nm, box);
  r.evaluations = best.evaluations + 1;
  r.budget_exhausted = !best.converged;
  if (1.0 - best.value >= r.fidelity_before) {
    r.area_scale = best.x[0];
    r.phase_eff = best.x[1];
    r.fidelity_after = 1.0 - best.value;
  } else {
    r.fidelity_after = r.fidelity_before;
  }
  return r;
}

}  // namespace kickfocus
