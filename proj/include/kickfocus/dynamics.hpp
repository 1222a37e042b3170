#pragma once

// Finite-duration kicks.
//
// Rotating frame: H(t) = f(t) R(t) A R(t)^dag with f = Omega (1 + a) / 2 and
// R(t) = exp(i nu t b^dag b). With W = R(t)^dag U R(t0), i dW/dt =
// (nu N + f(t) A) W, which is integrated by symmetric splitting
//   exp(-i nu N dt/2) exp(-i c_k A) exp(-i nu N dt/2),
// c_k being the exact integral of f over the cell. The work is done in the
// eigenbasis of the truncated position quadrature, where A is block diagonal
// (one spin block per quadrature node) and nu N is a dense cutoff x cutoff
// block. Every factor is an exact exponential, so the result is unitary to
// rounding.
//
// Comb train: lab-frame H = nu N + (w_hf/2) sum sigma_z
//   + sum_k Omega_k(t) (1 + a) sigma_x sin(eta x + w_A t).
// With the mode frozen inside a (sub-)window, each quadrature node carries an
// independent 2x2 spin problem, integrated with fourth-order Magnus steps.
// Mode evolution is interleaved by splitting at sub-window midpoints; the
// splitting error decays only once sub-windows resolve the hyperfine
// oscillation, so it is estimated on request rather than iterated away. The
// result is returned in the interaction picture of nu N + (w_hf/2) sum sigma_z.

#include <Eigen/Dense>
#include <array>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kickfocus/errors.hpp"
#include "kickfocus/fidelity.hpp"
#include "kickfocus/hilbert.hpp"
#include "kickfocus/nelder_mead.hpp"

namespace kickfocus {

enum class Envelope { sech };

inline constexpr double sech_window_halfwidth = 7.5;  // in units of tau

struct PulseSpec {
  double tau = 100e-9;
  Envelope envelope = Envelope::sech;
  double area = std::numbers::pi;
  double phase = 0.0;
  double center_time = 0.0;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("PulseSpec: tau must be positive");
    if (!(area > 0.0) || !std::isfinite(area)) throw std::invalid_argument("PulseSpec: area must be positive");
    if (!std::isfinite(phase) || !std::isfinite(center_time)) {
      throw std::invalid_argument("PulseSpec: non-finite phase or centre");
    }
  }

  double window_start() const { return center_time - sech_window_halfwidth * tau; }
  double window_end() const { return center_time + sech_window_halfwidth * tau; }

  /// Omega(t) = (area / tau) sech(pi (t - t_c) / tau)
  double rabi(double t) const {
    return area / tau / std::cosh(std::numbers::pi * (t - center_time) / tau);
  }

  /// Integral of Omega from -infinity to t, minus area / 2.
  double centred_integral(double t) const {
    const double u = std::numbers::pi * (t - center_time) / tau;
    return area / std::numbers::pi * 2.0 * std::atan(std::tanh(0.5 * u));
  }
};

struct TrapSpec {
  double nu = 0.0;
  double eta = 0.0;  // a negative value reverses the kick direction

  void validate() const {
    if (!std::isfinite(nu) || nu < 0.0) throw std::invalid_argument("TrapSpec: nu must be >= 0");
    if (!std::isfinite(eta) || std::abs(eta) >= 1.0) {
      throw std::invalid_argument("TrapSpec: |eta| must be < 1");
    }
  }
};

struct Propagation {
  ComplexMatrix unitary;
  int steps = 0;               // per pulse window
  double convergence = 0.0;    // max-norm change on the last step doubling
  double leakage = 0.0;        // top-two-level population from the vacuum sector
  bool leakage_warning = false;
  double splitting_error = 0.0;  // comb only: change when mode sub-windows double
};

inline constexpr double leakage_threshold = 1e-8;

/// Largest population that U moves into the two highest Fock levels, over
/// initial states |spin> |0>.
inline double vacuum_leakage(const ComplexMatrix& u, const HilbertSpace& space) {
  const int c = space.fock_cutoff();
  double worst = 0.0;
  for (int s = 0; s < space.spin_dim(); ++s) {
    const int col = space.index(s, 0);
    double p = 0.0;
    for (int s2 = 0; s2 < space.spin_dim(); ++s2) {
      for (int n = std::max(0, c - 2); n < c; ++n) p += std::norm(u(space.index(s2, n), col));
    }
    worst = std::max(worst, p);
  }
  return worst;
}

namespace detail {

// Quadrature-basis helpers shared by both integrators. Rows of a full-space
// matrix are indexed spin * cutoff + node.
class NodeFrame {
 public:
  explicit NodeFrame(const HilbertSpace& space)
      : space_(space), quad_(position_quadrature(space.fock_cutoff())) {}

  const HilbertSpace& space() const { return space_; }
  const Quadrature& quadrature() const { return quad_; }
  int nodes() const { return space_.fock_cutoff(); }

  /// exp(-i angle N) expressed on the quadrature nodes.
  ComplexMatrix free_mode(double angle) const {
    const int c = nodes();
    Eigen::VectorXcd ph(c);
    for (int n = 0; n < c; ++n) ph(n) = std::polar(1.0, -angle * n);
    const ComplexMatrix v = quad_.vectors.cast<Complex>();
    return v.transpose() * ph.asDiagonal() * v;
  }

  // Left-multiplies every spin row block of w by m.
  void apply_mode(ComplexMatrix& w, const ComplexMatrix& m) const {
    const int c = nodes();
    Eigen::Map<ComplexMatrix> view(w.data(), c, w.size() / c);
    scratch_.noalias() = m * view;
    view = scratch_;
  }

  // Left-multiplies the spin rows belonging to `node` by `block`.
  void apply_spin_block(ComplexMatrix& w, int node, const ComplexMatrix& block) const {
    using Strided = Eigen::Map<ComplexMatrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
    Strided rows(w.data() + node, space_.spin_dim(), w.cols(),
                 Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(w.rows(), nodes()));
    block_scratch_.noalias() = block * rows;
    rows = block_scratch_;
  }

  ComplexMatrix to_fock(const ComplexMatrix& w) const {
    const ComplexMatrix q = kron(identity(space_.spin_dim()), quad_.vectors.cast<Complex>());
    return q * w * q.transpose();
  }

 private:
  HilbertSpace space_;
  Quadrature quad_;
  mutable ComplexMatrix scratch_;
  mutable ComplexMatrix block_scratch_;
};

// exp(-i c (e^{i psi} sigma_plus + h.c.)) for one ion.
inline Eigen::Matrix2cd kick_block(double c, double psi) {
  Eigen::Matrix2cd s;
  const Complex mi_sin(0.0, -std::sin(c));
  s << std::cos(c), mi_sin * std::polar(1.0, psi), mi_sin * std::polar(1.0, -psi), std::cos(c);
  return s;
}

inline ComplexMatrix spin_block(const Eigen::Matrix2cd& u, int n_ions) {
  if (n_ions == 1) return u;
  ComplexMatrix out(4, 4);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) out.block(2 * i, 2 * j, 2, 2) = u(i, j) * u;
  }
  return out;
}

inline void check_amplitude_error(double a) {
  if (!std::isfinite(a) || std::abs(a) >= 0.5) {
    throw std::invalid_argument("amplitude_error must satisfy |a| < 0.5");
  }
}

}  // namespace detail

struct RotatingFrameOptions {
  int initial_steps = 128;  // per window
  int max_doublings = 10;
  double tolerance = 1e-10;
  int order = 4;  // 2: symmetric splitting; 4: its Suzuki triple-jump composition
};

/// One pass of the rotating-frame splitting with a fixed number of steps.
inline ComplexMatrix rotating_frame_fixed_steps(const PulseSpec& pulse, const TrapSpec& trap,
                                                const HilbertSpace& space, double amplitude_error,
                                                int steps, int order = 4) {
  if (order != 2 && order != 4) throw std::invalid_argument("rotating frame: order must be 2 or 4");
  const detail::NodeFrame frame(space);
  const int c = frame.nodes();
  const double t0 = pulse.window_start();
  const double t1 = pulse.window_end();
  const double dt = (t1 - t0) / steps;
  const bool moving = trap.nu != 0.0;

  // Substep fractions of one step.
  std::vector<double> fractions = {1.0};
  if (order == 4) {
    const double w1 = 1.0 / (2.0 - std::cbrt(2.0));
    fractions = {w1, 1.0 - 2.0 * w1, w1};
  }

  std::vector<std::pair<double, ComplexMatrix>> mode_cache;
  auto mode_factor = [&](double duration) -> const ComplexMatrix& {
    for (const auto& [d, m] : mode_cache) {
      if (d == duration) return m;
    }
    mode_cache.emplace_back(duration, frame.free_mode(trap.nu * duration));
    return mode_cache.back().second;
  };

  std::vector<double> psi(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) psi[k] = pulse.phase + trap.eta * frame.quadrature().positions(k);

  ComplexMatrix w = identity(space.dim());
  const double scale = 0.5 * (1.0 + amplitude_error);
  double pending = 0.0;
  for (int step = 0; step < steps; ++step) {
    double t = t0 + step * dt;
    for (double f : fractions) {
      const double len = f * dt;
      pending += 0.5 * len;
      if (moving) frame.apply_mode(w, mode_factor(pending));
      pending = 0.0;
      const double cell = scale * (pulse.centred_integral(t + len) - pulse.centred_integral(t));
      for (int k = 0; k < c; ++k) {
        frame.apply_spin_block(w, k, detail::spin_block(detail::kick_block(cell, psi[k]), space.n_ions()));
      }
      pending += 0.5 * len;
      t += len;
    }
  }
  if (moving) frame.apply_mode(w, frame.free_mode(trap.nu * pending));

  const ComplexMatrix wf = frame.to_fock(w);
  const Eigen::VectorXcd r1 = mode_rotation_diagonal(space, trap.nu * t1);
  const Eigen::VectorXcd r0 = mode_rotation_diagonal(space, trap.nu * t0);
  return r1.asDiagonal() * wf * r0.conjugate().asDiagonal();
}

/// Interaction-picture propagator of one sech pulse, step-doubled to tolerance.
inline Propagation integrate_rotating_frame_detailed(const PulseSpec& pulse, const TrapSpec& trap,
                                                     const HilbertSpace& space,
                                                     double amplitude_error,
                                                     const RotatingFrameOptions& opt = {}) {
  pulse.validate();
  trap.validate();
  detail::check_amplitude_error(amplitude_error);
  detail::check_kick_arguments(space, trap.eta, pulse.phase);
  if (opt.initial_steps < 1) throw std::invalid_argument("initial_steps must be >= 1");

  int steps = opt.initial_steps;
  ComplexMatrix prev = rotating_frame_fixed_steps(pulse, trap, space, amplitude_error, steps, opt.order);
  double delta = 0.0;
  for (int d = 0; d < opt.max_doublings; ++d) {
    steps *= 2;
    ComplexMatrix next = rotating_frame_fixed_steps(pulse, trap, space, amplitude_error, steps, opt.order);
    delta = detail::max_abs(next - prev);
    prev = std::move(next);
    if (delta < opt.tolerance) {
      Propagation out;
      out.unitary = std::move(prev);
      out.steps = steps;
      out.convergence = delta;
      out.leakage = vacuum_leakage(out.unitary, space);
      out.leakage_warning = out.leakage > leakage_threshold;
      return out;
    }
  }
  throw NumericalError("integrate_rotating_frame: no convergence after " + std::to_string(steps) +
                           " steps (last change " + format_number(delta) + ")",
                       delta);
}

inline ComplexMatrix integrate_rotating_frame(const PulseSpec& pulse, const TrapSpec& trap,
                                              const HilbertSpace& space, double amplitude_error,
                                              const RotatingFrameOptions& opt = {}) {
  return integrate_rotating_frame_detailed(pulse, trap, space, amplitude_error, opt).unitary;
}

/// A pulse centred at `center` from one centred at 0: R(center) U R(center)^dag.
inline ComplexMatrix translate_pulse(const HilbertSpace& space, const ComplexMatrix& u0,
                                     double nu, double center) {
  return conjugate_by_mode_rotation(space, u0, nu * center);
}

/// Kick with its phase advanced by phi.
inline ComplexMatrix rotate_phase(const HilbertSpace& space, const ComplexMatrix& u, double phi) {
  const ComplexMatrix z = spin_phase_rotation(space, phi);
  return z * u * z.adjoint();
}

/// Ordered product of kicks that share the shape of `u0` (centred at 0,
/// phase 0), placed at `centers` with axis phases `phases`.
inline ComplexMatrix place_kicks(const HilbertSpace& space, const ComplexMatrix& u0, double nu,
                                 const std::vector<double>& centers,
                                 const std::vector<double>& phases) {
  if (centers.size() != phases.size() || centers.empty()) {
    throw std::invalid_argument("place_kicks: need matching, nonempty centre and phase lists");
  }
  ComplexMatrix u = identity(space.dim());
  for (std::size_t j = 0; j < centers.size(); ++j) {
    u = (rotate_phase(space, translate_pulse(space, u0, nu, centers[j]), phases[j]) * u).eval();
  }
  return u;
}

/// Centres of a five-pulse composite with the given spacing, symmetric about 0.
inline std::vector<double> five_pulse_centers(double spacing) {
  return {-2 * spacing, -spacing, 0.0, spacing, 2 * spacing};
}

inline std::vector<double> five_pulse_phases(double theta) {
  return {0.0, theta, theta, -theta, -theta};
}

/// Five finite sech pulses sharing one amplitude error. Each pulse is the
/// translated and phase-rotated copy of one integrated pulse.
inline ComplexMatrix integrate_five_pulse(const PulseSpec& pulse, const TrapSpec& trap,
                                          const HilbertSpace& space, double amplitude_error,
                                          double spacing, double theta,
                                          const RotatingFrameOptions& opt = {}) {
  if (!(spacing > 0.0)) throw std::invalid_argument("integrate_five_pulse: spacing must be positive");
  PulseSpec centred = pulse;
  centred.center_time = 0.0;
  centred.phase = 0.0;
  const ComplexMatrix u0 = integrate_rotating_frame(centred, trap, space, amplitude_error, opt);
  std::vector<double> phases = five_pulse_phases(theta);
  for (double& p : phases) p += pulse.phase;
  std::vector<double> centers = five_pulse_centers(spacing);
  for (double& t : centers) t += pulse.center_time;
  return place_kicks(space, u0, trap.nu, centers, phases);
}

// ---------------------------------------------------------------------------
// Comb train

inline constexpr double default_hyperfine_gap = 2.0 * std::numbers::pi * 12.6e9;

struct TrainSpec {
  int n_splitters = 8;
  PulseSpec pulse{10e-12, Envelope::sech, 0.0, 0.0, 0.0};  // area is derived
  double inter_pulse_delay = 0.0;
  double aom_frequency = 0.0;
  double hyperfine_gap = default_hyperfine_gap;
  double kick_phase = 0.0;  // phase of the synthesized kick

  int pulse_count() const { return 1 << n_splitters; }
  double resonant_frequency() const { return hyperfine_gap + aom_frequency; }

  /// Per-pulse area making the resonant components of all pulses add up to a
  /// pi/2 kick: theta_p = pi / (2^N sech(w_r tau / 2)).
  double per_pulse_area() const {
    return std::numbers::pi * std::cosh(0.5 * resonant_frequency() * pulse.tau) / pulse_count();
  }

  double pulse_time(int k) const {
    return pulse.center_time + (k - 0.5 * (pulse_count() - 1)) * inter_pulse_delay;
  }
  double duration() const {
    return (pulse_count() - 1) * inter_pulse_delay + 2 * sech_window_halfwidth * pulse.tau;
  }

  void validate() const {
    if (n_splitters < 1 || n_splitters > 14) throw std::invalid_argument("TrainSpec: N must lie in [1, 14]");
    if (!(pulse.tau > 0.0) || !std::isfinite(pulse.tau)) throw std::invalid_argument("TrainSpec: tau must be positive");
    if (!(hyperfine_gap > 0.0) || !std::isfinite(hyperfine_gap)) {
      throw std::invalid_argument("TrainSpec: hyperfine gap must be positive");
    }
    if (!(hyperfine_gap * pulse.tau < 1.0)) {
      throw std::invalid_argument("TrainSpec: w_hf tau must be < 1 for the comb regime");
    }
    if (!std::isfinite(aom_frequency) || !std::isfinite(inter_pulse_delay) || !std::isfinite(kick_phase)) {
      throw std::invalid_argument("TrainSpec: non-finite timing parameter");
    }
    if (inter_pulse_delay < 2 * sech_window_halfwidth * pulse.tau) {
      throw std::invalid_argument("TrainSpec: pulse windows overlap");
    }
  }
};

/// Phase coordinates of a train: phi_r = w_r dt and phi_c = 2 w_A dt.
struct CombPhases {
  double resonant = 0.0;
  double counter = 0.0;
};

inline CombPhases comb_phases(const TrainSpec& t) {
  return {t.resonant_frequency() * t.inter_pulse_delay, 2.0 * t.aom_frequency * t.inter_pulse_delay};
}

inline void set_comb_phases(TrainSpec& t, CombPhases p) {
  t.inter_pulse_delay = (p.resonant - 0.5 * p.counter) / t.hyperfine_gap;
  t.aom_frequency = p.counter / (2.0 * t.inter_pulse_delay);
}

/// Phase of the kick synthesized by the resonant components:
/// -pi/2 + arg sum_k exp(i w_r t_k).
inline double nominal_kick_phase(const TrainSpec& t) {
  Complex sum = 0.0;
  for (int k = 0; k < t.pulse_count(); ++k) sum += std::polar(1.0, t.resonant_frequency() * t.pulse_time(k));
  return -0.5 * std::numbers::pi + std::arg(sum);
}

/// Train tuned to the m-th harmonic: w_r dt = 2 pi m and 2 w_A dt = pi.
inline TrainSpec resonant_train(int n_splitters, double tau, double hyperfine_gap, int harmonic = 3) {
  TrainSpec t;
  t.n_splitters = n_splitters;
  t.pulse.tau = tau;
  t.hyperfine_gap = hyperfine_gap;
  set_comb_phases(t, {2.0 * std::numbers::pi * harmonic, std::numbers::pi});
  t.kick_phase = nominal_kick_phase(t);
  t.pulse.area = t.per_pulse_area();
  t.validate();
  return t;
}

struct CombOptions {
  int min_steps_per_window = 400;
  int steps_per_hf_period = 40;
  int sub_windows = 1;  // mode splitting points per pulse window
  int max_doublings = 5;
  double tolerance = 1e-9;  // on doubling the in-window spin steps
  bool estimate_splitting = false;  // also rerun with doubled sub_windows
};

namespace detail {

// SU(2) element [[a, -conj(b)], [b, conj(a)]].
struct Su2 {
  Complex a{1.0, 0.0};
  Complex b{0.0, 0.0};

  Su2 operator*(const Su2& r) const {
    return {a * r.a - std::conj(b) * r.b, b * r.a + std::conj(a) * r.b};
  }
  Eigen::Matrix2cd matrix() const {
    Eigen::Matrix2cd m;
    m << a, -std::conj(b), b, std::conj(a);
    return m;
  }
  // exp(-i g . sigma)
  static Su2 exp_pauli(double gx, double gy, double gz) {
    const double n = std::sqrt(gx * gx + gy * gy + gz * gz);
    if (n == 0.0) return {};
    const double s = std::sin(n) / n;
    return {Complex(std::cos(n), -s * gz), Complex(s * gy, -s * gx)};
  }
};

class CombStepper {
 public:
  CombStepper(const TrainSpec& train, const TrapSpec& trap, const Quadrature& quad,
              double amplitude_error, int steps_per_window)
      : train_(train), amplitude_(1.0 + amplitude_error), steps_(steps_per_window) {
    const auto c = quad.positions.size();
    sin_eta_x_.resize(c);
    cos_eta_x_.resize(c);
    for (Eigen::Index k = 0; k < c; ++k) {
      sin_eta_x_[k] = std::sin(trap.eta * quad.positions(k));
      cos_eta_x_[k] = std::cos(trap.eta * quad.positions(k));
    }
    train_.pulse.area = train.per_pulse_area();
  }

  int nodes() const { return static_cast<int>(sin_eta_x_.size()); }

  // Spin propagators for all nodes over [from, to] inside the window of
  // pulse k, fourth-order Magnus with Gauss-Legendre nodes.
  void evolve(int k, double from, double to, std::vector<Su2>& u) const {
    PulseSpec p = train_.pulse;
    p.center_time = train_.pulse_time(k);
    const double window = 2 * sech_window_halfwidth * p.tau;
    const int n = std::max(1, static_cast<int>(std::ceil((to - from) / window * steps_ - 1e-9)));
    const double h = (to - from) / n;
    const double hz = 0.5 * train_.hyperfine_gap;
    const double wa = train_.aom_frequency;
    constexpr double g = 0.28867513459481287;  // sqrt(3) / 6
    for (int s = 0; s < n; ++s) {
      const double ta = from + (s + 0.5 - g) * h;
      const double tb = from + (s + 0.5 + g) * h;
      const double oa = amplitude_ * p.rabi(ta);
      const double ob = amplitude_ * p.rabi(tb);
      const double sa = std::sin(wa * ta), ca = std::cos(wa * ta);
      const double sb = std::sin(wa * tb), cb = std::cos(wa * tb);
      for (int j = 0; j < nodes(); ++j) {
        // h(t) = (Omega sin(eta x + w_A t), 0, w_hf / 2)
        const double xa = oa * (sin_eta_x_[j] * ca + cos_eta_x_[j] * sa);
        const double xb = ob * (sin_eta_x_[j] * cb + cos_eta_x_[j] * sb);
        // g = h/2 (h1 + h2) + sqrt(3)/6 h^2 (h2 x h1)
        const double cross_y = hz * (xa - xb);  // (h2 x h1)_y with h = (x, 0, hz)
        const double gx = 0.5 * h * (xa + xb);
        const double gy = g * h * h * cross_y;
        const double gz = h * hz;
        u[j] = Su2::exp_pauli(gx, gy, gz) * u[j];
      }
    }
  }

  static Su2 free_spin(double hz, double duration) {
    return Su2::exp_pauli(0.0, 0.0, hz * duration);
  }

 private:
  TrainSpec train_;
  double amplitude_;
  int steps_;
  std::vector<double> sin_eta_x_;
  std::vector<double> cos_eta_x_;
};

inline int comb_steps_per_window(const TrainSpec& train, const CombOptions& opt) {
  const double window = 2 * sech_window_halfwidth * train.pulse.tau;
  const double period = 2 * std::numbers::pi / train.hyperfine_gap;
  const int by_period = static_cast<int>(std::ceil(window / period * opt.steps_per_hf_period));
  return std::max(opt.min_steps_per_window, by_period);
}

}  // namespace detail

/// Per-node spin propagators of the whole train with the mode frozen (nu = 0),
/// in the spin interaction picture. Node j sees displacement phase eta x_j.
inline std::vector<Eigen::Matrix2cd> comb_spin_propagators(const TrainSpec& train,
                                                           const TrapSpec& trap, int fock_cutoff,
                                                           double amplitude_error,
                                                           int steps_per_window) {
  const Quadrature quad = position_quadrature(fock_cutoff);
  const detail::CombStepper stepper(train, trap, quad, amplitude_error, steps_per_window);
  const double w = sech_window_halfwidth * train.pulse.tau;
  const double hz = 0.5 * train.hyperfine_gap;
  std::vector<detail::Su2> u(static_cast<std::size_t>(fock_cutoff));
  const double t_start = train.pulse_time(0) - w;
  double t = t_start;
  for (int k = 0; k < train.pulse_count(); ++k) {
    const double from = train.pulse_time(k) - w;
    const detail::Su2 gap = detail::CombStepper::free_spin(hz, from - t);
    for (auto& x : u) x = gap * x;
    stepper.evolve(k, from, from + 2 * w, u);
    t = from + 2 * w;
  }
  // interaction picture: exp(i hz sigma_z t_end) U exp(-i hz sigma_z t_start)
  const detail::Su2 left = detail::CombStepper::free_spin(hz, -t);
  const detail::Su2 right = detail::CombStepper::free_spin(hz, t_start);
  std::vector<Eigen::Matrix2cd> out;
  out.reserve(u.size());
  for (const auto& x : u) out.push_back((left * x * right).matrix());
  return out;
}

/// Fidelity of frozen-mode per-node spin propagators against
/// exp(-i (pi/2) A(phase)) on the lowest `eval_fock_levels` Fock states.
inline double frozen_mode_fidelity(const std::vector<Eigen::Matrix2cd>& u, double eta,
                                   double phase, int n_ions, int eval_fock_levels) {
  const int c = static_cast<int>(u.size());
  const Quadrature quad = position_quadrature(c);
  Complex acc = 0.0;
  for (int j = 0; j < c; ++j) {
    double weight = 0.0;
    for (int n = 0; n < eval_fock_levels; ++n) weight += quad.vectors(n, j) * quad.vectors(n, j);
    const Eigen::Matrix2cd target = detail::kick_block(std::numbers::pi / 2, phase + eta * quad.positions(j));
    const Complex t = (target.adjoint() * u[j]).trace();
    acc += weight * (n_ions == 1 ? t : t * t);
  }
  const double spin_dim = n_ions == 1 ? 2.0 : 4.0;
  return std::abs(acc) / (spin_dim * eval_fock_levels);
}

/// Fixed-resolution lab-frame train propagator (interaction picture).
inline ComplexMatrix comb_train_fixed_steps(const TrainSpec& train, const TrapSpec& trap,
                                            const HilbertSpace& space, double amplitude_error,
                                            int steps_per_window, int sub_windows) {
  const detail::NodeFrame frame(space);
  const detail::CombStepper stepper(train, trap, frame.quadrature(), amplitude_error, steps_per_window);
  const double w = sech_window_halfwidth * train.pulse.tau;
  const double hz = 0.5 * train.hyperfine_gap;
  const int c = frame.nodes();
  const bool moving = trap.nu != 0.0;

  ComplexMatrix big = identity(space.dim());
  double pending_mode = 0.0;
  auto flush_mode = [&] {
    if (moving && pending_mode != 0.0) frame.apply_mode(big, frame.free_mode(trap.nu * pending_mode));
    pending_mode = 0.0;
  };

  const double t_start = train.pulse_time(0) - w;
  double t = t_start;
  std::vector<detail::Su2> u(static_cast<std::size_t>(c));
  const double sub = 2 * w / sub_windows;
  for (int k = 0; k < train.pulse_count(); ++k) {
    const double from = train.pulse_time(k) - w;
    pending_mode += from - t;
    const detail::Su2 gap = detail::CombStepper::free_spin(hz, from - t);
    for (int s = 0; s < sub_windows; ++s) {
      const double a = from + s * sub;
      std::fill(u.begin(), u.end(), s == 0 ? gap : detail::Su2{});
      stepper.evolve(k, a, a + sub, u);
      pending_mode += 0.5 * sub;
      flush_mode();
      for (int j = 0; j < c; ++j) frame.apply_spin_block(big, j, detail::spin_block(u[j].matrix(), space.n_ions()));
      pending_mode += 0.5 * sub;
    }
    t = from + 2 * w;
  }
  flush_mode();

  const ComplexMatrix lab = frame.to_fock(big);
  // exp(i H0 t_end) U exp(-i H0 t_start), H0 = nu N + hz sum sigma_z
  Eigen::VectorXcd left(space.dim()), right(space.dim());
  for (int s = 0; s < space.spin_dim(); ++s) {
    double zsum = 0.0;
    for (int i = 0; i < space.n_ions(); ++i) zsum += spin_z(space, s, i);
    for (int n = 0; n < space.fock_cutoff(); ++n) {
      const double e = trap.nu * n + hz * zsum;
      left(space.index(s, n)) = std::polar(1.0, e * t);
      right(space.index(s, n)) = std::polar(1.0, -e * t_start);
    }
  }
  return left.asDiagonal() * lab * right.asDiagonal();
}

inline Propagation integrate_comb_train_detailed(const TrainSpec& train, const TrapSpec& trap,
                                                 const HilbertSpace& space, double amplitude_error,
                                                 const CombOptions& opt = {}) {
  train.validate();
  trap.validate();
  detail::check_amplitude_error(amplitude_error);
  detail::check_kick_arguments(space, trap.eta, 0.0);
  if (opt.sub_windows < 1) throw std::invalid_argument("CombOptions: sub_windows must be >= 1");

  int steps = detail::comb_steps_per_window(train, opt);
  const int subs = opt.sub_windows;
  ComplexMatrix prev = comb_train_fixed_steps(train, trap, space, amplitude_error, steps, subs);
  double delta = 0.0;
  for (int d = 0; d < opt.max_doublings; ++d) {
    steps *= 2;
    ComplexMatrix next = comb_train_fixed_steps(train, trap, space, amplitude_error, steps, subs);
    delta = detail::max_abs(next - prev);
    prev = std::move(next);
    if (delta < opt.tolerance) {
      Propagation out;
      if (opt.estimate_splitting && trap.nu != 0.0) {
        out.splitting_error = detail::max_abs(
            comb_train_fixed_steps(train, trap, space, amplitude_error, steps, 2 * subs) - prev);
      }
      out.unitary = std::move(prev);
      out.steps = steps;
      out.convergence = delta;
      out.leakage = vacuum_leakage(out.unitary, space);
      out.leakage_warning = out.leakage > leakage_threshold;
      return out;
    }
  }
  throw NumericalError("integrate_comb_train: no convergence (last change " + format_number(delta) + ")",
                       delta);
}

inline ComplexMatrix integrate_comb_train(const TrainSpec& train, const TrapSpec& trap,
                                          const HilbertSpace& space, double amplitude_error,
                                          const CombOptions& opt = {}) {
  return integrate_comb_train_detailed(train, trap, space, amplitude_error, opt).unitary;
}

// ---------------------------------------------------------------------------
// Train calibration

struct TrainCalibrationOptions {
  /// Half widths of the search box around the template's phase coordinates;
  /// zero selects 2 / 2^N.
  double resonant_halfwidth = 0.0;
  double counter_halfwidth = 0.0;
  int grid_points = 11;  // per axis
  int refine_budget = 120;
  int eval_fock_levels = default_eval_fock_levels;
  int n_ions = 2;
  int steps_per_window = 0;  // zero: the CombOptions rule
  double failure_factor = 10.0;
};

struct TrainCalibration {
  TrainSpec train;
  double infidelity = 1.0;
  double template_infidelity = 1.0;
  int evaluations = 0;
};

/// Best kick phase and fidelity of a train at nu = 0.
inline std::pair<double, double> frozen_mode_best_phase(const TrainSpec& train, double eta,
                                                        int fock_cutoff, int n_ions,
                                                        int eval_fock_levels, int steps_per_window) {
  const auto u = comb_spin_propagators(train, TrapSpec{0.0, eta}, fock_cutoff, 0.0, steps_per_window);
  const double phi0 = nominal_kick_phase(train);
  auto loss = [&](double phi) { return 1.0 - frozen_mode_fidelity(u, eta, phi, n_ions, eval_fock_levels); };
  std::uintmax_t iters = 100;
  const auto [phi, value] = boost::math::tools::brent_find_minima(loss, phi0 - 0.3, phi0 + 0.3, 40, iters);
  return {phi, value};
}

/// Chooses the delay and AOM frequency of `train_template` that maximize the
/// frozen-mode fidelity. The search runs over phase coordinates (w_r dt,
/// 2 w_A dt): a grid scan followed by simplex refinement.
inline TrainCalibration calibrate_train(const TrainSpec& train_template, const TrapSpec& trap,
                                        const HilbertSpace& space,
                                        const TrainCalibrationOptions& opt = {}) {
  train_template.validate();
  trap.validate();
  if (opt.grid_points < 2) throw std::invalid_argument("calibrate_train: grid_points must be >= 2");
  const int steps = opt.steps_per_window > 0 ? opt.steps_per_window
                                             : detail::comb_steps_per_window(train_template, CombOptions{});
  const int n_ions = space.n_ions();
  const CombPhases centre = comb_phases(train_template);
  const double m_pulses = train_template.pulse_count();
  const double hr = opt.resonant_halfwidth > 0 ? opt.resonant_halfwidth : 2.0 / m_pulses;
  const double hc = opt.counter_halfwidth > 0 ? opt.counter_halfwidth : 2.0 / m_pulses;

  TrainCalibration out;
  auto evaluate = [&](const CombPhases& p, double* phase) {
    TrainSpec t = train_template;
    set_comb_phases(t, p);
    if (!(t.inter_pulse_delay >= 2 * sech_window_halfwidth * t.pulse.tau)) return 1.0;
    ++out.evaluations;
    const auto [phi, loss] = frozen_mode_best_phase(t, trap.eta, space.fock_cutoff(), n_ions,
                                                    opt.eval_fock_levels, steps);
    if (phase) *phase = phi;
    return loss;
  };

  out.template_infidelity = evaluate(centre, nullptr);
  CombPhases best = centre;
  double best_value = out.template_infidelity;
  for (int i = 0; i < opt.grid_points; ++i) {
    for (int j = 0; j < opt.grid_points; ++j) {
      const CombPhases p{centre.resonant - hr + 2 * hr * i / (opt.grid_points - 1),
                         centre.counter - hc + 2 * hc * j / (opt.grid_points - 1)};
      const double v = evaluate(p, nullptr);
      if (v < best_value) {
        best_value = v;
        best = p;
      }
    }
  }

  NelderMeadOptions nm;
  nm.max_evaluations = opt.refine_budget;
  nm.initial_step = {hr / (opt.grid_points - 1), hc / (opt.grid_points - 1)};
  nm.x_tolerance = 1e-9;
  const Box box{{centre.resonant - hr, centre.counter - hc}, {centre.resonant + hr, centre.counter + hc}};
  const auto refined = nelder_mead(
      [&](const std::vector<double>& x) { return evaluate({x[0], x[1]}, nullptr); },
      {best.resonant, best.counter}, nm, box);
  if (refined.value < best_value) {
    best_value = refined.value;
    best = {refined.x[0], refined.x[1]};
  }

  out.train = train_template;
  set_comb_phases(out.train, best);
  double phase = 0.0;
  out.infidelity = evaluate(best, &phase);
  out.train.kick_phase = phase;
  out.train.pulse.area = out.train.per_pulse_area();

  const double floor = std::ldexp(1.0, -2 * train_template.n_splitters);
  if (out.infidelity > opt.failure_factor * floor) {
    throw NumericalError("calibrate_train: best infidelity " + format_number(out.infidelity) +
                             " exceeds " + format_number(opt.failure_factor) + " x 2^-2N",
                         out.infidelity);
  }
  return out;
}

}  // namespace kickfocus
