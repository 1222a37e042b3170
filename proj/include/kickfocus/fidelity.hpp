#pragma once

// Process fidelity on a low-Fock evaluation subspace.
//
// F = |Tr(P U_eff^dag U_sim P)| / Tr(P), where P projects onto every spin
// state times Fock levels 0..eval_fock_levels-1. The modulus removes the
// global phase carried by per-ion kicks.

#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

#include "kickfocus/hilbert.hpp"

namespace kickfocus {

inline constexpr int default_fock_cutoff = 30;
inline constexpr int default_eval_fock_levels = 7;

struct FidelityReport {
  double fidelity = 0.0;
  double infidelity = 1.0;
  int eval_fock_levels = 0;
  std::map<std::string, double> parameters;
};

namespace detail {

// Tr(P U_eff^dag U_sim P) without forming the full product.
inline Complex projected_overlap(const ComplexMatrix& u_sim, const ComplexMatrix& u_eff,
                                 const HilbertSpace& space, int eval_fock_levels) {
  Complex acc = 0.0;
  for (int s = 0; s < space.spin_dim(); ++s) {
    for (int n = 0; n < eval_fock_levels; ++n) {
      const int c = space.index(s, n);
      acc += u_eff.col(c).dot(u_sim.col(c));  // dot conjugates its left operand
    }
  }
  return acc;
}

inline HilbertSpace infer_space(const ComplexMatrix& u, int fock_cutoff) {
  const Eigen::Index dim = u.rows();
  for (int ions = 1; ions <= 2; ++ions) {
    if (dim == (Eigen::Index{1} << ions) * fock_cutoff) return HilbertSpace(ions, fock_cutoff);
  }
  throw std::invalid_argument("process_fidelity: dimension " + std::to_string(dim) +
                              " does not match fock_cutoff " + std::to_string(fock_cutoff));
}

}  // namespace detail

inline FidelityReport process_fidelity(const ComplexMatrix& u_sim, const ComplexMatrix& u_eff,
                                       const HilbertSpace& space,
                                       int eval_fock_levels = default_eval_fock_levels) {
  if (u_sim.rows() != u_sim.cols() || u_eff.rows() != u_eff.cols() ||
      u_sim.rows() != u_eff.rows()) {
    throw std::invalid_argument("process_fidelity: dimension mismatch");
  }
  if (u_sim.rows() != space.dim()) {
    throw std::invalid_argument("process_fidelity: matrices do not live on the given space");
  }
  if (eval_fock_levels < 1 || eval_fock_levels > space.fock_cutoff()) {
    throw std::invalid_argument("process_fidelity: eval_fock_levels must lie in [1, fock_cutoff]");
  }
  const double norm = static_cast<double>(space.spin_dim() * eval_fock_levels);
  FidelityReport r;
  r.fidelity = std::abs(detail::projected_overlap(u_sim, u_eff, space, eval_fock_levels)) / norm;
  r.infidelity = 1.0 - r.fidelity;
  r.eval_fock_levels = eval_fock_levels;
  r.parameters = {{"n_ions", space.n_ions()},
                  {"fock_cutoff", space.fock_cutoff()},
                  {"eval_fock_levels", eval_fock_levels}};
  return r;
}

/// Overload for callers holding only matrices: the space is inferred from the
/// dimension and `fock_cutoff`.
inline FidelityReport process_fidelity(const ComplexMatrix& u_sim, const ComplexMatrix& u_eff,
                                       int eval_fock_levels, int fock_cutoff) {
  return process_fidelity(u_sim, u_eff, detail::infer_space(u_sim, fock_cutoff),
                          eval_fock_levels);
}

/// exp(-i (pi/2) A(phase_eff)) built with Lamb-Dicke parameter eta_eff.
inline ComplexMatrix target_sdk(const HilbertSpace& space, double eta_eff, double phase_eff) {
  return kick_propagator(space, eta_eff, phase_eff, std::numbers::pi / 2);
}

/// Fidelity of spin-only matrices (no mode factor), global phase removed.
inline double spin_fidelity(const ComplexMatrix& u, const ComplexMatrix& v) {
  if (u.rows() != v.rows() || u.cols() != v.cols()) {
    throw std::invalid_argument("spin_fidelity: dimension mismatch");
  }
  return std::abs((v.adjoint() * u).trace()) / static_cast<double>(u.rows());
}

}  // namespace kickfocus
