#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "kickfocus/hilbert.hpp"
#include "test_util.hpp"

using namespace kickfocus;
using kf_test::max_abs;

TEST(HilbertSpace, DimensionsAndValidation) {
  const HilbertSpace s(2, 30);
  EXPECT_EQ(s.dim(), 120);
  EXPECT_EQ(s.spin_dim(), 4);
  EXPECT_EQ(s.index(3, 4), 94);
  EXPECT_EQ(HilbertSpace(1, 1).dim(), 2);
  EXPECT_THROW(HilbertSpace(3, 4), std::invalid_argument);
  EXPECT_THROW(HilbertSpace(1, 0), std::invalid_argument);
}

TEST(HilbertSpace, SpinBitZeroIsUp) {
  const HilbertSpace s(2, 3);
  EXPECT_EQ(spin_z(s, 0, 0), 1);
  EXPECT_EQ(spin_z(s, 0, 1), 1);
  EXPECT_EQ(spin_z(s, 1, 0), 1);
  EXPECT_EQ(spin_z(s, 1, 1), -1);
  EXPECT_EQ(spin_z(s, 2, 0), -1);
  const ComplexMatrix z1 = embed(s, pauli::z(), Ion{0});
  EXPECT_EQ(z1(s.index(0, 1), s.index(0, 1)), Complex(1.0));
  EXPECT_EQ(z1(s.index(2, 1), s.index(2, 1)), Complex(-1.0));
  // sigma_plus raises |down> to |up>.
  EXPECT_EQ(pauli::plus()(0, 1), Complex(1.0));
}

TEST(Operators, LadderAlgebra) {
  const int c = 12;
  const ComplexMatrix b = annihilation(c);
  const ComplexMatrix comm = b * b.adjoint() - b.adjoint() * b;
  for (int n = 0; n < c - 1; ++n) EXPECT_NEAR(comm(n, n).real(), 1.0, 1e-14);
  EXPECT_LE(max_abs(b.adjoint() * b - number_operator(c)), 1e-14);
}

TEST(KickOperator, EtaZeroOneLevelIsSigmaX) {
  const ComplexMatrix a = build_kick_operator(HilbertSpace(1, 1), 0.0, 0.0);
  EXPECT_LE(max_abs(a - pauli::x()), 0.0);
}

TEST(KickOperator, SquaresToIdentityOnSafeLevels) {
  const HilbertSpace s(1, 30);
  const ComplexMatrix a = build_kick_operator(s, 0.1, 0.0);
  EXPECT_LE(max_abs(a - a.adjoint()), 1e-12);
  const ComplexMatrix a2 = a * a;
  const int safe = safe_fock_levels(30, 0.1);
  EXPECT_EQ(safe, 25);
  double dev = 0.0;
  for (int s1 = 0; s1 < 2; ++s1)
    for (int n = 0; n < safe; ++n)
      for (int s2 = 0; s2 < 2; ++s2)
        for (int m = 0; m < safe; ++m) {
          const double expected = (s1 == s2 && n == m) ? 1.0 : 0.0;
          dev = std::max(dev, std::abs(a2(s.index(s1, n), s.index(s2, m)) - expected));
        }
  EXPECT_LE(dev, 1e-10);
}

TEST(KickOperator, DisplacementMatchesDenseExponential) {
  // exp(i eta x) from the generic exponential of the truncated quadrature.
  const int c = 20;
  const ComplexMatrix b = annihilation(c);
  const ComplexMatrix x = b + b.adjoint();
  const ComplexMatrix d = matrix_exponential(x, Complex(0, 0.3));
  EXPECT_LE(max_abs(d - displacement_exponent(c, 0.3)), 1e-12);
  // Low matrix elements agree with the untruncated coherent displacement:
  // <0| D |0> = exp(-eta^2 / 2).
  EXPECT_NEAR(std::abs(d(0, 0)), std::exp(-0.045), 1e-12);
}

TEST(KickOperator, TwoIonTermsCommute) {
  const HilbertSpace s(2, 30);
  const KickBasis basis(s, 0.1);
  const ComplexMatrix a1 = basis.single_ion(0, std::numbers::pi / 3);
  const ComplexMatrix a2 = basis.single_ion(1, std::numbers::pi / 3);
  EXPECT_LE(max_abs(a1 * a2 - a2 * a1), 1e-12);
  EXPECT_LE(max_abs(a1 + a2 - build_kick_operator(s, 0.1, std::numbers::pi / 3)), 1e-14);
}

TEST(KickOperator, PropagatorMatchesExponential) {
  const HilbertSpace s(2, 10);
  const ComplexMatrix a = build_kick_operator(s, 0.2, 0.4);
  const ComplexMatrix u = matrix_exponential(a, Complex(0, -0.9));
  EXPECT_LE(max_abs(kick_propagator(s, 0.2, 0.4, 0.9) - u), 1e-12);
}

TEST(KickOperator, DoubleQuarterTurnSign) {
  for (int ions : {1, 2}) {
    const HilbertSpace s(ions, 30);
    const ComplexMatrix u = kick_propagator(s, 0.1, 0.0, std::numbers::pi / 2);
    const double sign = ions == 1 ? -1.0 : 1.0;
    EXPECT_LE(max_abs(u * u - sign * identity(s.dim())), 1e-12) << ions;
  }
}

TEST(KickOperator, RejectsBadArguments) {
  EXPECT_THROW(build_kick_operator(HilbertSpace(1, 1), 0.1, 0.0), std::invalid_argument);
  EXPECT_THROW(build_kick_operator(HilbertSpace(1, 5), std::numeric_limits<double>::quiet_NaN(), 0.0),
               std::invalid_argument);
  EXPECT_THROW(build_kick_operator(HilbertSpace(1, 5), 0.1, std::numeric_limits<double>::infinity()),
               std::invalid_argument);
}

TEST(Embed, Examples) {
  const HilbertSpace s(2, 3);
  EXPECT_LE(max_abs(embed(s, pauli::z(), Ion{0}) - kron(kron(pauli::z(), identity(2)), identity(3))), 0.0);
  const HilbertSpace s1(1, 30);
  const ComplexMatrix n = embed(s1, number_operator(30), Mode{});
  for (int sp = 0; sp < 2; ++sp)
    for (int k = 0; k < 30; ++k) EXPECT_EQ(n(s1.index(sp, k), s1.index(sp, k)), Complex(k));
  const ComplexMatrix x1 = embed(s, pauli::x(), Ion{0});
  const ComplexMatrix y2 = embed(s, pauli::y(), Ion{1});
  EXPECT_LE(max_abs(x1 * y2 - y2 * x1), 0.0);
}

TEST(Embed, IsHomomorphism) {
  const HilbertSpace s(2, 6);
  const ComplexMatrix p = pauli::x() * 0.3 + pauli::y() * Complex(0, 1.1);
  const ComplexMatrix q = pauli::z() + pauli::plus();
  EXPECT_LE(max_abs(embed(s, p * q, Ion{1}) - embed(s, p, Ion{1}) * embed(s, q, Ion{1})), 1e-14);
  const ComplexMatrix b = annihilation(6);
  EXPECT_LE(max_abs(embed(s, b * b.adjoint(), Mode{}) - embed(s, b, Mode{}) * embed(s, b.adjoint(), Mode{})),
            1e-14);
}

TEST(Embed, DimensionMismatch) {
  const HilbertSpace s(2, 4);
  EXPECT_THROW(embed(s, identity(3), Ion{0}), std::invalid_argument);
  EXPECT_THROW(embed(s, identity(5), Mode{}), std::invalid_argument);
  EXPECT_THROW(embed(s, identity(2), Ion{2}), std::invalid_argument);
}

// exp(+i phi/2 sum sigma_z) A(theta) exp(-i phi/2 sum sigma_z) = A(theta + phi)
// with sigma_plus = |up><down|. The opposite ordering gives A(theta - phi).
TEST(PhaseRotation, AdvancesKickPhase) {
  const HilbertSpace s(2, 12);
  const double theta = 0.4, phi = 1.3;
  const ComplexMatrix r = spin_phase_rotation(s, phi);
  const ComplexMatrix a = build_kick_operator(s, 0.1, theta);
  EXPECT_LE(max_abs(r * a * r.adjoint() - build_kick_operator(s, 0.1, theta + phi)), 1e-12);
  EXPECT_LE(max_abs(r.adjoint() * a * r - build_kick_operator(s, 0.1, theta - phi)), 1e-12);
}

TEST(ModeRotation, IsDiagonalExponential) {
  const HilbertSpace s(1, 8);
  const ComplexMatrix n = embed(s, number_operator(8), Mode{});
  const ComplexMatrix r = matrix_exponential(n, Complex(0, 0.7));
  EXPECT_LE(max_abs(ComplexMatrix(mode_rotation_diagonal(s, 0.7).asDiagonal()) - r), 1e-13);
}
