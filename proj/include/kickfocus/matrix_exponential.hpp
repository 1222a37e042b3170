#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include "kickfocus/errors.hpp"

namespace kickfocus {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

enum class ExpmMethod {
  automatic,  // eigendecomposition for anti-Hermitian exponents, Pade otherwise
  pade,
  hermitian_eigen,
};

struct ExpmResult {
  ComplexMatrix value;
  /// A posteriori error indicator: unitarity defect for anti-Hermitian
  /// exponents, ||exp(X) exp(-X) - 1||_max otherwise.
  double error_estimate = 0.0;
  ExpmMethod method_used = ExpmMethod::pade;
};

namespace detail {

inline double max_abs(const ComplexMatrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline bool is_anti_hermitian(const ComplexMatrix& x, double rel_tol = 1e-13) {
  const double scale = std::max(1.0, max_abs(x));
  return max_abs(x + x.adjoint()) <= rel_tol * scale;
}

inline double one_norm(const ComplexMatrix& m) {
  return m.cwiseAbs().colwise().sum().maxCoeff();
}

// Scaling and squaring with diagonal Pade approximants of degree 3..13
// (Higham, SIAM J. Matrix Anal. Appl. 26, 2005).
inline ComplexMatrix expm_pade(const ComplexMatrix& a) {
  const Eigen::Index n = a.rows();
  const ComplexMatrix id = ComplexMatrix::Identity(n, n);
  const double norm = one_norm(a);

  auto solve = [&](const ComplexMatrix& u, const ComplexMatrix& v) {
    return ComplexMatrix((v - u).partialPivLu().solve(v + u));
  };

  static constexpr std::array<double, 4> b3 = {120., 60., 12., 1.};
  static constexpr std::array<double, 6> b5 = {30240., 15120., 3360., 420., 30., 1.};
  static constexpr std::array<double, 8> b7 = {17297280., 8648640., 1995840., 277200.,
                                               25200.,    1512.,    56.,      1.};
  static constexpr std::array<double, 10> b9 = {17643225600., 8821612800., 2075673600.,
                                                302702400.,   30270240.,   2162160.,
                                                110880.,      3960.,       90.,
                                                1.};
  static constexpr std::array<double, 14> b13 = {
      64764752532480000., 32382376266240000., 7771770303897600., 1187353796428800.,
      129060195264000.,   10559470521600.,    670442572800.,    33522128640.,
      1323241920.,        40840800.,          960960.,          16380.,
      182.,               1.};

  if (norm <= 1.495585217958292e-2) {
    const ComplexMatrix a2 = a * a;
    const ComplexMatrix u = a * (b3[3] * a2 + b3[1] * id);
    const ComplexMatrix v = b3[2] * a2 + b3[0] * id;
    return solve(u, v);
  }
  if (norm <= 2.539398330063230e-1) {
    const ComplexMatrix a2 = a * a;
    const ComplexMatrix a4 = a2 * a2;
    const ComplexMatrix u = a * (b5[5] * a4 + b5[3] * a2 + b5[1] * id);
    const ComplexMatrix v = b5[4] * a4 + b5[2] * a2 + b5[0] * id;
    return solve(u, v);
  }
  if (norm <= 9.504178996162932e-1) {
    const ComplexMatrix a2 = a * a;
    const ComplexMatrix a4 = a2 * a2;
    const ComplexMatrix a6 = a4 * a2;
    const ComplexMatrix u = a * (b7[7] * a6 + b7[5] * a4 + b7[3] * a2 + b7[1] * id);
    const ComplexMatrix v = b7[6] * a6 + b7[4] * a4 + b7[2] * a2 + b7[0] * id;
    return solve(u, v);
  }
  if (norm <= 2.097847961257068) {
    const ComplexMatrix a2 = a * a;
    const ComplexMatrix a4 = a2 * a2;
    const ComplexMatrix a6 = a4 * a2;
    const ComplexMatrix a8 = a6 * a2;
    const ComplexMatrix u =
        a * (b9[9] * a8 + b9[7] * a6 + b9[5] * a4 + b9[3] * a2 + b9[1] * id);
    const ComplexMatrix v = b9[8] * a8 + b9[6] * a6 + b9[4] * a4 + b9[2] * a2 + b9[0] * id;
    return solve(u, v);
  }

  constexpr double theta13 = 5.371920351148152;
  int squarings = 0;
  if (norm > theta13) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / theta13))));
  }
  const ComplexMatrix as = a / std::ldexp(1.0, squarings);
  const ComplexMatrix a2 = as * as;
  const ComplexMatrix a4 = a2 * a2;
  const ComplexMatrix a6 = a4 * a2;
  const ComplexMatrix u =
      as * (a6 * (b13[13] * a6 + b13[11] * a4 + b13[9] * a2) + b13[7] * a6 + b13[5] * a4 +
            b13[3] * a2 + b13[1] * id);
  const ComplexMatrix v = a6 * (b13[12] * a6 + b13[10] * a4 + b13[8] * a2) + b13[6] * a6 +
                          b13[4] * a4 + b13[2] * a2 + b13[0] * id;
  ComplexMatrix r = solve(u, v);
  for (int k = 0; k < squarings; ++k) {
    r = (r * r).eval();
  }
  return r;
}

// exp(x) for anti-Hermitian x = i h, through the spectral decomposition of h.
inline ComplexMatrix expm_anti_hermitian(const ComplexMatrix& x) {
  const ComplexMatrix h = Complex(0.0, -1.0) * x;
  const ComplexMatrix herm = 0.5 * (h + h.adjoint());
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> eig(herm);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("matrix_exponential: Hermitian eigensolver failed");
  }
  const Eigen::VectorXcd phases =
      eig.eigenvalues().unaryExpr([](double w) { return std::polar(1.0, w); });
  return eig.eigenvectors() * phases.asDiagonal() * eig.eigenvectors().adjoint();
}

}  // namespace detail

/// exp(scale * m) together with a self-reported accuracy indicator.
inline ExpmResult matrix_exponential_checked(const ComplexMatrix& m, Complex scale,
                                             ExpmMethod method = ExpmMethod::automatic) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("matrix_exponential: matrix is not square");
  }
  if (!m.allFinite() || !std::isfinite(scale.real()) || !std::isfinite(scale.imag())) {
    throw std::invalid_argument("matrix_exponential: non-finite input");
  }
  const ComplexMatrix x = scale * m;
  const Eigen::Index n = x.rows();
  const ComplexMatrix id = ComplexMatrix::Identity(n, n);
  const bool anti_hermitian = detail::is_anti_hermitian(x);

  ExpmResult out;
  if (method == ExpmMethod::hermitian_eigen && !anti_hermitian) {
    throw std::invalid_argument(
        "matrix_exponential: eigen route requires an anti-Hermitian exponent");
  }
  const bool use_eigen = method == ExpmMethod::hermitian_eigen ||
                         (method == ExpmMethod::automatic && anti_hermitian);
  if (use_eigen) {
    out.value = detail::expm_anti_hermitian(x);
    out.method_used = ExpmMethod::hermitian_eigen;
  } else {
    out.value = detail::expm_pade(x);
    out.method_used = ExpmMethod::pade;
  }

  if (anti_hermitian) {
    out.error_estimate = detail::max_abs(out.value.adjoint() * out.value - id);
  } else {
    const ComplexMatrix inverse = detail::expm_pade(-x);
    const double growth =
        std::max(1.0, detail::max_abs(out.value) * detail::max_abs(inverse) *
                          static_cast<double>(n));
    out.error_estimate = detail::max_abs(out.value * inverse - id) / growth;
  }
  return out;
}

/// exp(scale * m); throws NumericalError when the accuracy indicator exceeds
/// `tolerance`.
inline ComplexMatrix matrix_exponential(const ComplexMatrix& m, Complex scale,
                                        double tolerance = 1e-10,
                                        ExpmMethod method = ExpmMethod::automatic) {
  ExpmResult r = matrix_exponential_checked(m, scale, method);
  if (!(r.error_estimate <= tolerance)) {
    throw NumericalError("matrix_exponential: accuracy estimate " +
                             format_number(r.error_estimate) + " exceeds tolerance",
                         r.error_estimate);
  }
  return std::move(r.value);
}

}  // namespace kickfocus
