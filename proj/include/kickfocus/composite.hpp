#pragma once

// Composite-pulse sequences and their amplitude-error expansion.
//
// Every pulse is an impulsive unitary exp(-i area (1 + f) X(axis_phase)) with
//   single_body: X = sigma_axis on one spin (2x2),
//   two_body:    X = sigma_x (x) sigma_axis (4x4),
//   sdk:         X = A(axis_phase), the kick operator on the full space.
// `area` is the generator angle, so a bare SDK has area pi/2 and the 2 pi
// correction rotations of the single and two-body sequences are identities
// in the absence of error. Pulse 0 is applied first.

#include <boost/math/tools/toms748_solve.hpp>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kickfocus/errors.hpp"
#include "kickfocus/fidelity.hpp"
#include "kickfocus/hilbert.hpp"

namespace kickfocus {

enum class PulseKind { single_body, two_body, sdk };

/// How a user-facing noise value maps to the per-pulse area error.
/// fractional: area -> area (1 + f).
/// absolute:   an offset eps added to a pi/2 exponent, i.e. f = eps / (pi/2).
enum class NoiseConvention { fractional, absolute };

inline double sdk_refocusing_theta() { return std::acos(-0.25); }

struct SequencePulse {
  double axis_phase = 0.0;
  double area = std::numbers::pi / 2;
  PulseKind kind = PulseKind::sdk;
};

struct SequenceSpec {
  std::vector<SequencePulse> pulses;
  double theta = 0.0;
  double target_area = std::numbers::pi / 2;
  double target_phase = 0.0;  // axis of the protected rotation

  PulseKind kind() const { return pulses.front().kind; }

  void validate() const {
    if (pulses.empty()) throw std::invalid_argument("SequenceSpec: empty sequence");
    for (const auto& p : pulses) {
      if (!(p.area > 0.0) || !std::isfinite(p.area)) {
        throw std::invalid_argument("SequenceSpec: pulse areas must be positive and finite");
      }
      if (!std::isfinite(p.axis_phase)) {
        throw std::invalid_argument("SequenceSpec: non-finite axis phase");
      }
      if (p.kind != pulses.front().kind) {
        throw std::invalid_argument("SequenceSpec: mixed pulse kinds");
      }
    }
  }
};

struct ErrorSeries {
  ComplexMatrix zeroth;
  double first_coeff = 0.0;   // |projection of i U'(0) U(0)^dag onto the protected axis|
  double signed_first = 0.0;  // the same projection with its sign
  double second_coeff = 0.0;  // RMS norm of the second-order generator
};

inline SequenceSpec bare_sequence(PulseKind kind, double area, double axis_phase = 0.0) {
  SequenceSpec s;
  s.pulses = {{axis_phase, area, kind}};
  s.target_area = area;
  s.target_phase = axis_phase;
  return s;
}

/// Bare SDK followed by four pi/2 kicks at phases theta, theta, -theta, -theta.
inline SequenceSpec five_pulse_sdk(double theta = sdk_refocusing_theta()) {
  const double a = std::numbers::pi / 2;
  SequenceSpec s;
  s.pulses = {{0.0, a, PulseKind::sdk},
              {theta, a, PulseKind::sdk},
              {theta, a, PulseKind::sdk},
              {-theta, a, PulseKind::sdk},
              {-theta, a, PulseKind::sdk}};
  s.theta = theta;
  s.target_area = a;
  return s;
}

/// Bare rotation of area g*tau followed by 2 pi corrections at +theta, -theta.
inline SequenceSpec corrected_sequence(PulseKind kind, double g_times_tau, double theta) {
  if (kind == PulseKind::sdk) {
    throw std::invalid_argument("corrected_sequence: use five_pulse_sdk for kicks");
  }
  SequenceSpec s;
  const double two_pi = 2.0 * std::numbers::pi;
  if (g_times_tau > 0.0) s.pulses.push_back({0.0, g_times_tau, kind});
  s.pulses.push_back({theta, two_pi, kind});
  s.pulses.push_back({-theta, two_pi, kind});
  s.theta = theta;
  s.target_area = g_times_tau;
  return s;
}

inline double fractional_error(double epsilon, NoiseConvention convention) {
  if (!std::isfinite(epsilon) || std::abs(epsilon) >= 0.5) {
    throw std::invalid_argument("amplitude error must satisfy |epsilon| < 0.5");
  }
  return convention == NoiseConvention::fractional ? epsilon : epsilon / (std::numbers::pi / 2);
}

namespace detail {

inline ComplexMatrix spin_axis_operator(PulseKind kind, double phase) {
  return kind == PulseKind::single_body ? pauli::axis(phase) : kron(pauli::x(), pauli::axis(phase));
}

// exp(-i angle X) for X^2 = 1.
inline ComplexMatrix involution_exponential(const ComplexMatrix& x, double angle) {
  return std::cos(angle) * identity(static_cast<int>(x.rows())) - Complex(0, std::sin(angle)) * x;
}

struct SequenceEvaluator {
  SequenceEvaluator(const SequenceSpec& seq, const HilbertSpace& space, double eta)
      : seq(seq) {
    seq.validate();
    if (seq.kind() == PulseKind::sdk) basis.emplace(space, eta);
  }

  ComplexMatrix operator()(double f) const {
    ComplexMatrix u;
    for (const auto& p : seq.pulses) {
      const double angle = p.area * (1.0 + f);
      ComplexMatrix step = basis ? basis->propagator(p.axis_phase, angle)
                                 : involution_exponential(spin_axis_operator(p.kind, p.axis_phase), angle);
      u = u.size() == 0 ? step : ComplexMatrix(step * u);
    }
    return u;
  }

  ComplexMatrix protected_axis() const {
    const double phase = seq.target_phase;
    return basis ? basis->kick_operator(phase) : spin_axis_operator(seq.kind(), phase);
  }

  const SequenceSpec& seq;
  std::optional<KickBasis> basis;
};

}  // namespace detail

inline ComplexMatrix sequence_propagator(const SequenceSpec& seq, double epsilon,
                                         const HilbertSpace& space, double eta,
                                         NoiseConvention convention = NoiseConvention::fractional) {
  const double f = fractional_error(epsilon, convention);
  return detail::SequenceEvaluator(seq, space, eta)(f);
}

/// Expansion of U(f) = exp(-i (f G1 + f^2 G2 + ...)) U(0) in the fractional
/// area error f, by Richardson-extrapolated central differences.
inline ErrorSeries error_series(const SequenceSpec& seq, const HilbertSpace& space, double eta,
                                double step = 1e-4) {
  if (!(step > 0.0) || step > 1e-2) throw std::invalid_argument("error_series: step out of range");
  const detail::SequenceEvaluator u(seq, space, eta);
  const double h = step;
  const ComplexMatrix u0 = u(0.0);
  const ComplexMatrix p1 = u(h), m1 = u(-h), p2 = u(2 * h), m2 = u(-2 * h);
  const ComplexMatrix ph = u(h / 2), mh = u(-h / 2);

  auto first = [&](const ComplexMatrix& p, const ComplexMatrix& m, double s) {
    return ComplexMatrix((p - m) / (2 * s));
  };
  auto second = [&](const ComplexMatrix& p, const ComplexMatrix& m, double s) {
    return ComplexMatrix((p - 2.0 * u0 + m) / (s * s));
  };
  const ComplexMatrix d1 = (4.0 * first(p1, m1, h) - first(p2, m2, 2 * h)) / 3.0;
  const ComplexMatrix d1_check = (4.0 * first(ph, mh, h / 2) - first(p1, m1, h)) / 3.0;
  const ComplexMatrix d2 = (4.0 * second(p1, m1, h) - second(p2, m2, 2 * h)) / 3.0;

  const double disagreement = detail::max_abs(d1 - d1_check);
  if (disagreement > 1e-6) {
    throw NumericalError("error_series: ill-conditioned extrapolation (estimates differ by " +
                             format_number(disagreement) + ")",
                         disagreement);
  }

  const ComplexMatrix g1 = Complex(0, 1) * d1 * u0.adjoint();
  const ComplexMatrix g2 = Complex(0, 0.5) * (d2 * u0.adjoint() + g1 * g1);
  const ComplexMatrix axis = u.protected_axis();

  ErrorSeries out;
  out.zeroth = u0;
  out.signed_first = (g1 * axis).trace().real() / (axis * axis).trace().real();
  out.first_coeff = std::abs(out.signed_first);
  out.second_coeff = g2.norm() / std::sqrt(static_cast<double>(g2.rows()));
  return out;
}

/// Correction phase theta that cancels the first-order error of a bare
/// rotation of area g*tau. Scans [lo, hi] for a sign change of the signed
/// first-order projection and polishes it with TOMS 748.
inline double calibrate_theta(PulseKind kind, double g_times_tau, double lo = 0.0,
                              double hi = std::numbers::pi, int scan_points = 64) {
  if (kind == PulseKind::sdk) throw std::invalid_argument("calibrate_theta: kind must be single or two body");
  if (!std::isfinite(g_times_tau) || g_times_tau < 0.0) {
    throw std::invalid_argument("calibrate_theta: g_times_tau must be finite and >= 0");
  }
  if (!(lo < hi) || scan_points < 2) throw std::invalid_argument("calibrate_theta: bad bracket");

  const HilbertSpace dummy(1, 1);
  auto residual = [&](double theta) {
    return error_series(corrected_sequence(kind, g_times_tau, theta), dummy, 0.0).signed_first;
  };

  double a = lo, fa = residual(lo);
  for (int k = 1; k <= scan_points; ++k) {
    const double b = lo + (hi - lo) * k / scan_points;
    const double fb = residual(b);
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if ((fa < 0.0) != (fb < 0.0)) {
      std::uintmax_t iterations = 200;
      const auto [x0, x1] = boost::math::tools::toms748_solve(
          residual, a, b, fa, fb, boost::math::tools::eps_tolerance<double>(52), iterations);
      const double theta = 0.5 * (x0 + x1);
      const double check = std::abs(residual(theta));
      if (check > 1e-8) {
        throw NumericalError("calibrate_theta: root residual " + format_number(check), check);
      }
      return theta;
    }
    a = b;
    fa = fb;
  }
  throw NumericalError("calibrate_theta: no root in window");
}

}  // namespace kickfocus
