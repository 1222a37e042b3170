#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "kickfocus/hilbert.hpp"
#include "kickfocus/matrix_exponential.hpp"
#include "test_util.hpp"

using namespace kickfocus;
using kf_test::max_abs;

namespace {

ComplexMatrix random_hermitian(int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  ComplexMatrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = Complex(g(rng), g(rng));
  return 0.5 * (m + m.adjoint());
}

// Scaled Taylor series, squared back up: a slow oracle independent of Pade.
ComplexMatrix taylor_expm(const ComplexMatrix& x) {
  int s = 0;
  double norm = x.cwiseAbs().colwise().sum().maxCoeff();
  while (norm > 0.1) {
    norm /= 2;
    ++s;
  }
  const ComplexMatrix y = x / std::pow(2.0, s);
  ComplexMatrix term = ComplexMatrix::Identity(x.rows(), x.cols());
  ComplexMatrix sum = term;
  for (int k = 1; k < 30; ++k) {
    term = (term * y / static_cast<double>(k)).eval();
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = (sum * sum).eval();
  return sum;
}

}  // namespace

TEST(MatrixExponential, PauliXQuarterTurn) {
  const ComplexMatrix u = matrix_exponential(pauli::x(), Complex(0, -std::numbers::pi / 2));
  EXPECT_LE(max_abs(u - Complex(0, -1) * pauli::x()), 1e-12);
}

TEST(MatrixExponential, ZeroMatrixGivesIdentity) {
  const ComplexMatrix z = ComplexMatrix::Zero(5, 5);
  EXPECT_LE(max_abs(matrix_exponential(z, Complex(3.0, -7.0)) - identity(5)), 0.0);
}

TEST(MatrixExponential, SpinRotationClosedForm) {
  const double th = 0.731;
  const ComplexMatrix n = 0.6 * pauli::x() + 0.8 * pauli::z();
  const ComplexMatrix expected = std::cos(th) * identity(2) - Complex(0, std::sin(th)) * n;
  EXPECT_LE(max_abs(matrix_exponential(n, Complex(0, -th)) - expected), 1e-14);
}

TEST(MatrixExponential, HermitianExponentIsUnitaryAndMatchesTaylor) {
  for (unsigned seed : {1u, 2u, 3u}) {
    const ComplexMatrix h = random_hermitian(24, seed);
    for (double t : {0.01, 1.0, 13.0}) {
      const auto r = matrix_exponential_checked(h, Complex(0, -t));
      EXPECT_EQ(r.method_used, ExpmMethod::hermitian_eigen);
      EXPECT_TRUE(is_unitary(r.value, 1e-10));
      const ComplexMatrix oracle = taylor_expm(Complex(0, -t) * h);
      EXPECT_LE(max_abs(r.value - oracle), 1e-10 * std::max(1.0, t));
      const ComplexMatrix pade = matrix_exponential(h, Complex(0, -t), 1e-10, ExpmMethod::pade);
      EXPECT_LE(max_abs(pade - r.value), 1e-10 * std::max(1.0, t));
    }
  }
}

TEST(MatrixExponential, GeneralMatrixMatchesTaylor) {
  ComplexMatrix m = random_hermitian(10, 7);
  m(0, 3) += Complex(2.0, 0.5);  // no longer Hermitian
  const auto r = matrix_exponential_checked(m, Complex(0.3, 0.2));
  EXPECT_EQ(r.method_used, ExpmMethod::pade);
  const ComplexMatrix oracle = taylor_expm(Complex(0.3, 0.2) * m);
  EXPECT_LE(max_abs(r.value - oracle) / max_abs(oracle), 1e-12);
  EXPECT_LE(r.error_estimate, 1e-12);
}

TEST(MatrixExponential, NilpotentIsExact) {
  ComplexMatrix n = ComplexMatrix::Zero(2, 2);
  n(0, 1) = 1.0;
  const ComplexMatrix u = matrix_exponential(n, Complex(2.5, 0));
  EXPECT_NEAR(u(0, 1).real(), 2.5, 1e-14);
  EXPECT_NEAR(u(0, 0).real(), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(u(1, 0)), 0.0, 1e-14);
}

TEST(MatrixExponential, RejectsBadInput) {
  ComplexMatrix m = ComplexMatrix::Identity(3, 3);
  m(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(matrix_exponential(m, Complex(1, 0)), std::invalid_argument);
  EXPECT_THROW(matrix_exponential(ComplexMatrix::Zero(2, 3), Complex(1, 0)), std::invalid_argument);
  EXPECT_THROW(matrix_exponential(identity(2), Complex(std::numeric_limits<double>::infinity(), 0)),
               std::invalid_argument);
  EXPECT_THROW(matrix_exponential(identity(2), Complex(1, 0), 1e-10, ExpmMethod::hermitian_eigen),
               std::invalid_argument);
}

TEST(MatrixExponential, ReportsToleranceFailure) {
  // A badly scaled non-normal matrix whose inverse check cannot reach 1e-300.
  ComplexMatrix m = random_hermitian(6, 11);
  m(0, 5) += 40.0;
  EXPECT_THROW(matrix_exponential(m, Complex(1.0, 0.0), 1e-300), NumericalError);
}

TEST(MatrixExponential, DoubleKickIsMinusIdentityOnSafeSubspace) {
  const HilbertSpace space(1, 30);
  const double eta = 0.1;
  const ComplexMatrix a = build_kick_operator(space, eta, 0.0);
  const ComplexMatrix u = matrix_exponential(a, Complex(0, -std::numbers::pi / 2));
  const ComplexMatrix uu = u * u;
  const int safe = safe_fock_levels(30, eta);
  double dev = 0.0;
  for (int s = 0; s < 2; ++s)
    for (int n = 0; n < safe; ++n)
      for (int s2 = 0; s2 < 2; ++s2)
        for (int m = 0; m < safe; ++m) {
          const Complex expected = (s == s2 && n == m) ? -1.0 : 0.0;
          dev = std::max(dev, std::abs(uu(space.index(s, n), space.index(s2, m)) - expected));
        }
  EXPECT_LE(dev, 1e-10);
}
