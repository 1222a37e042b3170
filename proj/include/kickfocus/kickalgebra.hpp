#pragma once

// Phase-space algebra of instantaneous spin-dependent kicks.
//
// A kick at time t with physical direction sign and strength eta acts on each
// ion as sigma_plus D(i eta sign e^{i nu t}) + h.c. (interaction picture), so
// an ion currently in state z receives the displacement -z * sign. Every kick
// flips both spins, hence for a branch labelled by the initial values
// (z1, z2) kick k displaces by
//   alpha_k = i * s_k * sign_k * eta_k * e^{i nu t_k},  s_k = -(z1 + z2) (-1)^k.
// With alternating physical signs the effective direction is constant.
// Composition: D(b) D(a) = exp(i Im(b conj(a))) D(a + b), so the branch phase
// is sum_{j<k} Im(conj(alpha_j) alpha_k), and the conditional phase is
//   chi = [Phi(up,up) + Phi(dn,dn) - Phi(up,dn) - Phi(dn,up)] / 4,
// giving the gate exp(i chi z1 z2) up to a global phase.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "kickfocus/composite.hpp"
#include "kickfocus/dynamics.hpp"
#include "kickfocus/fidelity.hpp"
#include "kickfocus/hilbert.hpp"
#include "kickfocus/nelder_mead.hpp"

namespace kickfocus {

struct Kick {
  double time = 0.0;
  int sign = 1;
  double eta = 0.0;
};

struct KickSchedule {
  std::vector<Kick> kicks;
  double nu = 0.0;
  bool alternating = true;

  void validate() const {
    if (!std::isfinite(nu)) throw std::invalid_argument("KickSchedule: non-finite nu");
    for (std::size_t k = 0; k < kicks.size(); ++k) {
      const Kick& q = kicks[k];
      if (!std::isfinite(q.time) || !std::isfinite(q.eta)) {
        throw std::invalid_argument("KickSchedule: non-finite kick");
      }
      if (q.sign != 1 && q.sign != -1) throw std::invalid_argument("KickSchedule: sign must be +1 or -1");
      if (k > 0 && !(q.time > kicks[k - 1].time)) {
        throw std::invalid_argument("KickSchedule: times must be strictly increasing");
      }
      if (alternating && k > 0 && q.sign != -kicks[k - 1].sign) {
        throw std::invalid_argument("KickSchedule: signs must alternate");
      }
    }
  }
};

struct BranchState {
  int z1 = 1;
  int z2 = 1;
  Complex net_displacement{0.0, 0.0};
  double accumulated_phase = 0.0;
};

struct BranchResult {
  std::array<BranchState, 4> branches;  // (up,up), (up,dn), (dn,up), (dn,dn)
  double chi = 0.0;

  double closure() const {
    double worst = 0.0;
    for (const auto& b : branches) worst = std::max(worst, std::abs(b.net_displacement));
    return worst;
  }
  const BranchState& branch(int z1, int z2) const {
    return branches[(z1 == 1 ? 0 : 2) + (z2 == 1 ? 0 : 1)];
  }
};

inline BranchResult compose_schedule(const KickSchedule& s) {
  s.validate();
  BranchResult r;
  int idx = 0;
  for (int z1 : {1, -1}) {
    for (int z2 : {1, -1}) {
      BranchState b;
      b.z1 = z1;
      b.z2 = z2;
      Complex prefix{0.0, 0.0};
      double phase = 0.0;
      for (std::size_t k = 0; k < s.kicks.size(); ++k) {
        const Kick& q = s.kicks[k];
        const double flips = (k % 2 == 0) ? 1.0 : -1.0;
        const double spin_sum = -static_cast<double>(z1 + z2) * flips;
        const Complex alpha = Complex(0.0, spin_sum * q.sign * q.eta) * std::polar(1.0, s.nu * q.time);
        phase += std::imag(std::conj(prefix) * alpha);
        prefix += alpha;
      }
      b.net_displacement = prefix;
      b.accumulated_phase = phase;
      r.branches[idx++] = b;
    }
  }
  r.chi = (r.branch(1, 1).accumulated_phase + r.branch(-1, -1).accumulated_phase -
           r.branch(1, -1).accumulated_phase - r.branch(-1, 1).accumulated_phase) /
          4.0;
  return r;
}

// ---------------------------------------------------------------------------
// Schedule search

struct ScheduleSearchOptions {
  int restarts = 20;
  int budget_per_restart = 40000;
  std::uint64_t seed = 1;
  int workers = 1;
  double closure_tolerance = 1e-8;
  double chi_tolerance = 1e-6;
  double min_gap = 1e-3;  // smallest allowed nu * (t_{k+1} - t_k)
};

struct ScheduleSearchResult {
  KickSchedule schedule;
  bool success = false;
  double closure = 0.0;
  double chi = 0.0;
  double chi_error = 0.0;
  double objective = 0.0;
  int best_restart = -1;
  std::string message;
};

/// Time-symmetric schedule: nu t = +-(cumulative gaps), gaps = |p| + min_gap.
inline KickSchedule symmetric_schedule(const std::vector<double>& p, double nu, double eta,
                                       double min_gap) {
  const std::size_t half = p.size();
  std::vector<double> cum(half);
  double acc = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    acc += std::abs(p[i]) + (i == 0 ? 0.5 * min_gap : min_gap);
    cum[i] = acc;
  }
  KickSchedule s;
  s.nu = nu;
  s.alternating = true;
  for (std::size_t i = half; i-- > 0;) s.kicks.push_back({-cum[i] / nu, 1, eta});
  for (std::size_t i = 0; i < half; ++i) s.kicks.push_back({cum[i] / nu, 1, eta});
  for (std::size_t k = 0; k < s.kicks.size(); ++k) s.kicks[k].sign = (k % 2 == 0) ? 1 : -1;
  return s;
}

inline ScheduleSearchResult gate_schedule_search(int n_kicks, double nu, double eta,
                                                 double target_chi,
                                                 const ScheduleSearchOptions& opt = {}) {
  if (n_kicks < 2 || n_kicks % 2 != 0) throw std::invalid_argument("gate_schedule_search: n_kicks must be even and >= 2");
  if (!(nu > 0.0) || !std::isfinite(nu)) throw std::invalid_argument("gate_schedule_search: nu must be positive");
  if (!std::isfinite(eta) || !std::isfinite(target_chi)) throw std::invalid_argument("gate_schedule_search: non-finite input");
  if (opt.restarts < 1 || opt.workers < 1) throw std::invalid_argument("gate_schedule_search: restarts and workers must be >= 1");

  const int half = n_kicks / 2;
  auto objective = [&](const std::vector<double>& p) {
    const BranchResult r = compose_schedule(symmetric_schedule(p, nu, eta, opt.min_gap));
    double closure = 0.0;
    for (const auto& b : r.branches) closure += std::norm(b.net_displacement);
    return closure + (r.chi - target_chi) * (r.chi - target_chi);
  };

  std::vector<NelderMeadResult> results(static_cast<std::size_t>(opt.restarts));
  auto run = [&](int restart) {
    std::mt19937_64 engine(opt.seed + static_cast<std::uint64_t>(restart));
    std::vector<double> p0(static_cast<std::size_t>(half));
    for (auto& x : p0) x = 0.1 + 1.4 * (static_cast<double>(engine() >> 11) * 0x1.0p-53);
    NelderMeadOptions nm;
    nm.max_evaluations = opt.budget_per_restart;
    nm.f_tolerance = 1e-30;
    nm.x_tolerance = 1e-13;
    NelderMeadResult best = nelder_mead(objective, p0, nm);
    // Restarting the simplex at the incumbent escapes collapsed simplices.
    for (int again = 0; again < 3 && best.value > 1e-24; ++again) {
      NelderMeadResult next = nelder_mead(objective, best.x, nm);
      if (next.value < best.value) best = std::move(next);
    }
    results[static_cast<std::size_t>(restart)] = std::move(best);
  };

  if (opt.workers == 1) {
    for (int i = 0; i < opt.restarts; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    std::mutex m;
    int next = 0;
    for (int w = 0; w < opt.workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          int i;
          {
            std::lock_guard lock(m);
            if (next >= opt.restarts) return;
            i = next++;
          }
          run(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  int best = 0;
  for (int i = 1; i < opt.restarts; ++i) {
    if (results[i].value < results[best].value) best = i;
  }
  ScheduleSearchResult out;
  out.schedule = symmetric_schedule(results[best].x, nu, eta, opt.min_gap);
  const BranchResult r = compose_schedule(out.schedule);
  out.closure = r.closure();
  out.chi = r.chi;
  out.chi_error = std::abs(r.chi - target_chi);
  out.objective = results[best].value;
  out.best_restart = best;
  out.success = out.closure <= opt.closure_tolerance && out.chi_error <= opt.chi_tolerance;
  out.message = out.success ? "converged"
                            : "no schedule met the targets: best closure " + format_number(out.closure) +
                                  ", chi error " + format_number(out.chi_error);
  return out;
}

// ---------------------------------------------------------------------------
// Numeric gate propagator

enum class KickModel { ideal, finite_pulse, composite_five, composite_five_finite, comb_train };

struct KickModelSpec {
  KickModel model = KickModel::ideal;
  PulseSpec pulse;                    // finite models: shape and duration
  double composite_spacing = 0.0;     // composite_five_finite; zero selects tau
  double theta = sdk_refocusing_theta();
  TrainSpec train;                    // comb_train
  RotatingFrameOptions rotating;
  CombOptions comb;
};

/// Propagator of a single kick with physical direction `sign`, centred at 0,
/// axis phase 0.
inline ComplexMatrix centred_kick(const KickModelSpec& spec, const HilbertSpace& space, double nu,
                                  double eta, int sign, double epsilon) {
  const double signed_eta = sign * eta;
  switch (spec.model) {
    case KickModel::ideal:
      detail::check_amplitude_error(epsilon);
      return kick_propagator(space, signed_eta, 0.0, 0.5 * std::numbers::pi * (1.0 + epsilon));
    case KickModel::composite_five:
      return sequence_propagator(five_pulse_sdk(spec.theta), epsilon, space, signed_eta);
    case KickModel::finite_pulse: {
      PulseSpec p = spec.pulse;
      p.center_time = 0.0;
      p.phase = 0.0;
      p.area = std::numbers::pi;
      return integrate_rotating_frame(p, TrapSpec{nu, signed_eta}, space, epsilon, spec.rotating);
    }
    case KickModel::composite_five_finite: {
      PulseSpec p = spec.pulse;
      p.center_time = 0.0;
      p.phase = 0.0;
      p.area = std::numbers::pi;
      const double spacing = spec.composite_spacing > 0.0 ? spec.composite_spacing : p.tau;
      return integrate_five_pulse(p, TrapSpec{nu, signed_eta}, space, epsilon, spacing, spec.theta,
                                  spec.rotating);
    }
    case KickModel::comb_train: {
      TrainSpec t = spec.train;
      t.pulse.center_time = 0.0;
      const ComplexMatrix u = integrate_comb_train(t, TrapSpec{nu, signed_eta}, space, epsilon, spec.comb);
      return rotate_phase(space, u, -t.kick_phase);
    }
  }
  throw std::invalid_argument("centred_kick: unknown kick model");
}

/// Full gate propagator: each kick realized by the kick model, placed at its
/// time by the exact free-evolution frame change. All kicks share epsilon.
inline ComplexMatrix simulate_schedule_numeric(const KickSchedule& s, const HilbertSpace& space,
                                               const KickModelSpec& spec, double epsilon) {
  s.validate();
  if (space.n_ions() != 2) throw std::invalid_argument("simulate_schedule_numeric: needs two ions");
  ComplexMatrix u = identity(space.dim());
  std::vector<std::pair<std::pair<double, int>, ComplexMatrix>> cache;
  for (const Kick& k : s.kicks) {
    const ComplexMatrix* base = nullptr;
    for (const auto& [key, m] : cache) {
      if (key.first == k.eta && key.second == k.sign) base = &m;
    }
    if (!base) {
      cache.push_back({{k.eta, k.sign}, centred_kick(spec, space, s.nu, k.eta, k.sign, epsilon)});
      base = &cache.back().second;
    }
    u = (translate_pulse(space, *base, s.nu, k.time) * u).eval();
  }
  return u;
}

/// exp(i chi z1 z2) on the spins, identity on the mode.
inline ComplexMatrix conditional_phase_gate(const HilbertSpace& space, double chi) {
  if (space.n_ions() != 2) throw std::invalid_argument("conditional_phase_gate: needs two ions");
  Eigen::VectorXcd d(space.dim());
  for (int s = 0; s < 4; ++s) {
    const double zz = spin_z(space, s, 0) * spin_z(space, s, 1);
    for (int n = 0; n < space.fock_cutoff(); ++n) d(space.index(s, n)) = std::polar(1.0, chi * zz);
  }
  return d.asDiagonal();
}

/// Branch phases of a numeric propagator, read from <z, 0| U |z, 0>.
inline std::array<double, 4> numeric_branch_phases(const ComplexMatrix& u, const HilbertSpace& space) {
  std::array<double, 4> out{};
  for (int s = 0; s < 4; ++s) out[s] = std::arg(u(space.index(s, 0), space.index(s, 0)));
  return out;
}

}  // namespace kickfocus
