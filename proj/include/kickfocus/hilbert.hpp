#pragma once

// Truncated operators on the (ion 1) x (ion 2) x (motional mode) space.
//
// Basis ordering is fixed: ion 1 is the most significant factor, the mode the
// least significant one, so the flat index is spin_index * fock_cutoff + n
// where spin_index = sum_i bit_i * 2^(n_ions - 1 - i). Spin bit 0 is |up>
// (sigma_z = +1) and sigma_plus = |up><down|.
//
// The displacement factor exp(i eta (b + b^dag)) is the exponential of the
// truncated position quadrature, evaluated in its eigenbasis. It is exactly
// unitary on the truncated space, so every per-ion kick operator squares to
// the identity and truncation only shows up as distorted matrix elements near
// the top Fock level.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "kickfocus/matrix_exponential.hpp"

namespace kickfocus {

using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

class HilbertSpace {
 public:
  HilbertSpace(int n_ions, int fock_cutoff) : n_ions_(n_ions), fock_cutoff_(fock_cutoff) {
    if (n_ions != 1 && n_ions != 2) {
      throw std::invalid_argument("HilbertSpace: n_ions must be 1 or 2");
    }
    if (fock_cutoff < 1) {
      throw std::invalid_argument("HilbertSpace: fock_cutoff must be >= 1");
    }
  }

  int n_ions() const noexcept { return n_ions_; }
  int fock_cutoff() const noexcept { return fock_cutoff_; }
  int spin_dim() const noexcept { return 1 << n_ions_; }
  int dim() const noexcept { return spin_dim() * fock_cutoff_; }
  int index(int spin, int fock) const noexcept { return spin * fock_cutoff_ + fock; }

  friend bool operator==(const HilbertSpace&, const HilbertSpace&) = default;

 private:
  int n_ions_;
  int fock_cutoff_;
};

struct Ion {
  int index;  // 0-based
};
struct Mode {};
using Factor = std::variant<Ion, Mode>;

namespace pauli {

inline ComplexMatrix x() {
  ComplexMatrix m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}
inline ComplexMatrix y() {
  ComplexMatrix m(2, 2);
  m << 0, Complex(0, -1), Complex(0, 1), 0;
  return m;
}
inline ComplexMatrix z() {
  ComplexMatrix m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}
inline ComplexMatrix plus() {
  ComplexMatrix m(2, 2);
  m << 0, 1, 0, 0;
  return m;
}
inline ComplexMatrix minus() { return plus().transpose(); }

/// cos(phi) sigma_x + sin(phi) sigma_y
inline ComplexMatrix axis(double phi) { return std::cos(phi) * x() + std::sin(phi) * y(); }

}  // namespace pauli

inline ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b) {
  ComplexMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

inline ComplexMatrix identity(int n) { return ComplexMatrix::Identity(n, n); }

inline ComplexMatrix annihilation(int cutoff) {
  ComplexMatrix b = ComplexMatrix::Zero(cutoff, cutoff);
  for (int n = 1; n < cutoff; ++n) b(n - 1, n) = std::sqrt(static_cast<double>(n));
  return b;
}

inline ComplexMatrix number_operator(int cutoff) {
  ComplexMatrix m = ComplexMatrix::Zero(cutoff, cutoff);
  for (int n = 0; n < cutoff; ++n) m(n, n) = static_cast<double>(n);
  return m;
}

/// Eigenbasis of the truncated position quadrature b + b^dag. Columns of
/// `vectors` are real orthonormal eigenvectors expressed in the Fock basis.
struct Quadrature {
  RealVector positions;
  RealMatrix vectors;
};

inline Quadrature position_quadrature(int cutoff) {
  RealMatrix x = RealMatrix::Zero(cutoff, cutoff);
  for (int n = 1; n < cutoff; ++n) {
    x(n - 1, n) = x(n, n - 1) = std::sqrt(static_cast<double>(n));
  }
  Eigen::SelfAdjointEigenSolver<RealMatrix> eig(x);
  return {eig.eigenvalues(), eig.eigenvectors()};
}

/// exp(i eta (b + b^dag)) on `cutoff` Fock levels.
inline ComplexMatrix displacement_exponent(int cutoff, double eta) {
  const Quadrature q = position_quadrature(cutoff);
  const Eigen::VectorXcd phases =
      q.positions.unaryExpr([eta](double x) { return std::polar(1.0, eta * x); });
  return q.vectors.cast<Complex>() * phases.asDiagonal() * q.vectors.transpose().cast<Complex>();
}

/// Operator acting as `factor_operator` on one tensor factor and as the
/// identity elsewhere.
inline ComplexMatrix embed(const HilbertSpace& space, const ComplexMatrix& factor_operator,
                           const Factor& which) {
  if (factor_operator.rows() != factor_operator.cols()) {
    throw std::invalid_argument("embed: operator is not square");
  }
  if (const Ion* ion = std::get_if<Ion>(&which)) {
    if (ion->index < 0 || ion->index >= space.n_ions()) {
      throw std::invalid_argument("embed: ion index out of range");
    }
    if (factor_operator.rows() != 2) {
      throw std::invalid_argument("embed: ion operators must be 2x2");
    }
    ComplexMatrix spin = ion->index == 0 ? factor_operator : identity(2);
    for (int i = 1; i < space.n_ions(); ++i) {
      spin = kron(spin, i == ion->index ? factor_operator : identity(2));
    }
    return kron(spin, identity(space.fock_cutoff()));
  }
  if (factor_operator.rows() != space.fock_cutoff()) {
    throw std::invalid_argument("embed: mode operator dimension " +
                                std::to_string(factor_operator.rows()) +
                                " does not match fock_cutoff " +
                                std::to_string(space.fock_cutoff()));
  }
  return kron(identity(space.spin_dim()), factor_operator);
}

namespace detail {

inline void check_kick_arguments(const HilbertSpace& space, double eta, double phase) {
  if (!std::isfinite(eta) || !std::isfinite(phase)) {
    throw std::invalid_argument("kick operator: eta and phase must be finite");
  }
  if (eta != 0.0 && space.fock_cutoff() < 2) {
    throw std::invalid_argument("kick operator: a displacement needs fock_cutoff >= 2");
  }
}

}  // namespace detail

/// Per-ion raising parts sigma_plus_i exp(i eta (b + b^dag)), built once and
/// reused for kicks at arbitrary phase and angle.
class KickBasis {
 public:
  KickBasis(const HilbertSpace& space, double eta) : space_(space), eta_(eta) {
    detail::check_kick_arguments(space, eta, 0.0);
    const ComplexMatrix d = embed(space, displacement_exponent(space.fock_cutoff(), eta), Mode{});
    for (int i = 0; i < space.n_ions(); ++i) raise_.push_back(embed(space, pauli::plus(), Ion{i}) * d);
  }

  const HilbertSpace& space() const noexcept { return space_; }
  double eta() const noexcept { return eta_; }

  /// e^{i phase} sigma_plus_i D + h.c.
  ComplexMatrix single_ion(int ion, double phase) const {
    const ComplexMatrix term = std::polar(1.0, phase) * raise_.at(static_cast<std::size_t>(ion));
    return term + term.adjoint();
  }

  ComplexMatrix kick_operator(double phase) const {
    if (!std::isfinite(phase)) throw std::invalid_argument("kick operator: non-finite phase");
    ComplexMatrix a = ComplexMatrix::Zero(space_.dim(), space_.dim());
    for (int i = 0; i < space_.n_ions(); ++i) a += single_ion(i, phase);
    return a;
  }

  /// exp(-i angle A(phase)) as a product of cos(angle) - i sin(angle) A_i.
  /// Exact: each single-ion term squares to the identity and terms of
  /// different ions commute.
  ComplexMatrix propagator(double phase, double angle) const {
    if (!std::isfinite(phase) || !std::isfinite(angle)) {
      throw std::invalid_argument("kick propagator: non-finite phase or angle");
    }
    const ComplexMatrix id = identity(space_.dim());
    ComplexMatrix u = std::cos(angle) * id - Complex(0, std::sin(angle)) * single_ion(0, phase);
    for (int i = 1; i < space_.n_ions(); ++i) {
      u = ((std::cos(angle) * id - Complex(0, std::sin(angle)) * single_ion(i, phase)) * u).eval();
    }
    return u;
  }

 private:
  HilbertSpace space_;
  double eta_;
  std::vector<ComplexMatrix> raise_;
};

/// A(phase) = sum_i sigma_plus_i e^{i phase} e^{i eta (b^dag + b)} + h.c.
inline ComplexMatrix build_kick_operator(const HilbertSpace& space, double eta, double phase) {
  detail::check_kick_arguments(space, eta, phase);
  return KickBasis(space, eta).kick_operator(phase);
}

/// exp(-i angle A(phase)).
inline ComplexMatrix kick_propagator(const HilbertSpace& space, double eta, double phase,
                                     double angle) {
  detail::check_kick_arguments(space, eta, phase);
  return KickBasis(space, eta).propagator(phase, angle);
}

/// exp(+i (phi / 2) sum_i sigma_z^i): conjugating a kick operator A(theta)
/// with it yields A(theta + phi).
inline ComplexMatrix spin_phase_rotation(const HilbertSpace& space, double phi) {
  Eigen::VectorXcd diag(space.dim());
  for (int s = 0; s < space.spin_dim(); ++s) {
    double zsum = 0.0;
    for (int i = 0; i < space.n_ions(); ++i) {
      const int bit = (s >> (space.n_ions() - 1 - i)) & 1;
      zsum += bit == 0 ? 1.0 : -1.0;
    }
    for (int n = 0; n < space.fock_cutoff(); ++n) {
      diag(space.index(s, n)) = std::polar(1.0, 0.5 * phi * zsum);
    }
  }
  return diag.asDiagonal();
}

/// Diagonal of exp(i angle b^dag b) on the full space.
inline Eigen::VectorXcd mode_rotation_diagonal(const HilbertSpace& space, double angle) {
  Eigen::VectorXcd diag(space.dim());
  for (int s = 0; s < space.spin_dim(); ++s) {
    for (int n = 0; n < space.fock_cutoff(); ++n) {
      diag(space.index(s, n)) = std::polar(1.0, angle * n);
    }
  }
  return diag;
}

/// R U R^dag with R = exp(i angle b^dag b): moves an interaction-picture
/// propagator to a kick centred `angle / nu` later.
inline ComplexMatrix conjugate_by_mode_rotation(const HilbertSpace& space, const ComplexMatrix& u,
                                                double angle) {
  const Eigen::VectorXcd r = mode_rotation_diagonal(space, angle);
  return r.asDiagonal() * u * r.conjugate().asDiagonal();
}

/// Number of low Fock levels on which truncation-sensitive identities are
/// checked: cutoff - ceil(8 eta sqrt(cutoff)).
inline int safe_fock_levels(int cutoff, double eta) {
  const int excluded = static_cast<int>(std::ceil(8.0 * std::abs(eta) * std::sqrt(cutoff)));
  return std::max(0, cutoff - excluded);
}

/// Sigma_z eigenvalue (+1 for up) of `ion` in spin configuration `spin`.
inline int spin_z(const HilbertSpace& space, int spin, int ion) {
  return ((spin >> (space.n_ions() - 1 - ion)) & 1) == 0 ? 1 : -1;
}

inline bool is_unitary(const ComplexMatrix& u, double tol = 1e-10) {
  return detail::max_abs(u.adjoint() * u - identity(static_cast<int>(u.rows()))) <= tol;
}

}  // namespace kickfocus
