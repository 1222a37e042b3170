#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kickfocus/kickalgebra.hpp"
#include "test_util.hpp"

using namespace kickfocus;

namespace {

const double kPi = std::numbers::pi;

KickSchedule square_loop(double eta, double nu) {
  KickSchedule s;
  s.nu = nu;
  const int signs[4] = {1, -1, 1, -1};
  for (int k = 0; k < 4; ++k) s.kicks.push_back({k * (kPi / 2) / nu, signs[k], eta});
  return s;
}

// Numeric branch phases relative to the (up, dn) branch.
std::array<double, 4> relative_phases(const std::array<double, 4>& p) {
  std::array<double, 4> out{};
  for (int i = 0; i < 4; ++i) out[i] = std::remainder(p[i] - p[1], 2 * kPi);
  return out;
}

void expect_algebra_matches_numeric(const KickSchedule& s, int cutoff, double tol) {
  const HilbertSpace space(2, cutoff);
  const BranchResult r = compose_schedule(s);
  const ComplexMatrix u = simulate_schedule_numeric(s, space, KickModelSpec{}, 0.0);
  const auto num = relative_phases(numeric_branch_phases(u, space));
  std::array<double, 4> alg{};
  for (int i = 0; i < 4; ++i) alg[i] = r.branches[i].accumulated_phase;
  const auto alg_rel = relative_phases(alg);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(num[i], alg_rel[i], tol) << "branch " << i;
}

double gate_min_gap(double nu) { return 2 * 100e-9 * nu; }

}  // namespace

TEST(KickSchedule, Validation) {
  KickSchedule s = square_loop(0.1, 1.0);
  EXPECT_NO_THROW(s.validate());
  KickSchedule same_sign = s;
  same_sign.kicks[1].sign = 1;
  EXPECT_THROW(same_sign.validate(), std::invalid_argument);
  same_sign.alternating = false;
  EXPECT_NO_THROW(same_sign.validate());
  KickSchedule unordered = s;
  unordered.kicks[2].time = unordered.kicks[1].time;
  EXPECT_THROW(unordered.validate(), std::invalid_argument);
  KickSchedule bad_sign = s;
  bad_sign.kicks[0].sign = 0;
  EXPECT_THROW(bad_sign.validate(), std::invalid_argument);
}

// Two kicks at the same time argument whose displacements cancel. Each kick
// flips the spins, so cancelling displacements need equal physical signs.
TEST(ComposeSchedule, OppositeDisplacementsCancel) {
  KickSchedule s;
  s.nu = 0.0;
  s.alternating = false;
  s.kicks = {{0.0, 1, 0.1}, {1.0, 1, 0.1}};
  const BranchResult r = compose_schedule(s);
  EXPECT_EQ(r.closure(), 0.0);
  for (const auto& b : r.branches) EXPECT_EQ(b.accumulated_phase, 0.0);
  EXPECT_EQ(r.chi, 0.0);
}

TEST(ComposeSchedule, SquareLoop) {
  const double eta = 0.1;
  const KickSchedule s = square_loop(eta, 2 * kPi * 1e5);
  const BranchResult r = compose_schedule(s);
  EXPECT_LE(r.closure(), 1e-15);
  // Side 2 eta in alpha units; the phase is twice the enclosed alpha-plane area.
  EXPECT_NEAR(r.branch(1, 1).accumulated_phase, 8 * eta * eta, 1e-15);
  EXPECT_NEAR(r.branch(-1, -1).accumulated_phase, 8 * eta * eta, 1e-15);
  EXPECT_EQ(r.branch(1, -1).accumulated_phase, 0.0);
  EXPECT_NEAR(r.chi, 4 * eta * eta, 1e-15);
  expect_algebra_matches_numeric(s, 20, 1e-8);
}

TEST(ComposeSchedule, PlusPlusMinusMinusDoesNotClose) {
  KickSchedule s = square_loop(0.1, 1.0);
  s.alternating = false;
  const int signs[4] = {1, 1, -1, -1};
  for (int k = 0; k < 4; ++k) s.kicks[k].sign = signs[k];
  EXPECT_GT(compose_schedule(s).closure(), 0.1);
}

TEST(ComposeSchedule, TimeShiftInvariance) {
  const double nu = 2 * kPi * 1e5;
  KickSchedule s = square_loop(0.1, nu);
  KickSchedule shifted = s;
  for (auto& k : shifted.kicks) k.time += 3.3e-6;
  EXPECT_NEAR(compose_schedule(shifted).chi, compose_schedule(s).chi, 1e-10);

  const HilbertSpace space(2, 20);
  const ComplexMatrix u = simulate_schedule_numeric(s, space, KickModelSpec{}, 0.0);
  const ComplexMatrix v = simulate_schedule_numeric(shifted, space, KickModelSpec{}, 0.0);
  // Shifting every kick equals conjugating by the free rotation over the shift.
  EXPECT_LE(kf_test::max_abs(translate_pulse(space, u, nu, 3.3e-6) - v), 1e-10);
}

TEST(GateSearch, FourKicksAgainstCoarseGrid) {
  const double nu = 1.0, eta = 0.5, chi = kPi / 4;
  // Coarse grid over the symmetric two-gap ansatz, polished by the simplex.
  auto objective = [&](const std::vector<double>& p) {
    const BranchResult r = compose_schedule(symmetric_schedule(p, nu, eta, 1e-3));
    double c = 0.0;
    for (const auto& b : r.branches) c += std::norm(b.net_displacement);
    return c + (r.chi - chi) * (r.chi - chi);
  };
  std::vector<double> best{0.0, 0.0};
  double best_value = 1e300;
  for (int i = 0; i <= 40; ++i)
    for (int j = 0; j <= 40; ++j) {
      const std::vector<double> p{3.0 * i / 40, 3.0 * j / 40};
      if (const double v = objective(p); v < best_value) {
        best_value = v;
        best = p;
      }
    }
  NelderMeadOptions nm;
  nm.max_evaluations = 5000;
  nm.f_tolerance = 1e-30;
  nm.x_tolerance = 1e-14;
  const auto polished = nelder_mead(objective, best, nm);
  EXPECT_LT(polished.value, 1e-16);

  ScheduleSearchOptions opt;
  opt.min_gap = 1e-3;
  const auto r = gate_schedule_search(4, nu, eta, chi, opt);
  ASSERT_TRUE(r.success) << r.message;
  EXPECT_LE(r.closure, 1e-8);
  EXPECT_LE(r.chi_error, 1e-6);
  expect_algebra_matches_numeric(r.schedule, 40, 1e-8);
}

TEST(GateSearch, TwoKicksCannotEntangle) {
  ScheduleSearchOptions opt;
  opt.restarts = 5;
  const auto r = gate_schedule_search(2, 1.0, 0.5, kPi / 4, opt);
  EXPECT_FALSE(r.success);
  EXPECT_GT(r.objective, 1e-3);
  EXPECT_NE(r.message.find("best closure"), std::string::npos);
}

TEST(GateSearch, Validation) {
  EXPECT_THROW(gate_schedule_search(3, 1.0, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(gate_schedule_search(4, 0.0, 0.1, 1.0), std::invalid_argument);
  ScheduleSearchOptions bad;
  bad.restarts = 0;
  EXPECT_THROW(gate_schedule_search(4, 1.0, 0.1, 1.0, bad), std::invalid_argument);
}

TEST(GateSearch, TwentyEightKickGate) {
  const double nu = 2 * kPi * 1e5, eta = 0.06;
  ScheduleSearchOptions opt;
  opt.min_gap = gate_min_gap(nu);
  const auto r = gate_schedule_search(28, nu, eta, kPi / 4, opt);
  ASSERT_TRUE(r.success) << r.message;
  EXPECT_LE(r.closure, 1e-8);
  EXPECT_LE(r.chi_error, 1e-6);
  ASSERT_EQ(r.schedule.kicks.size(), 28u);
  for (std::size_t k = 1; k < 28; ++k) {
    EXPECT_GE(nu * (r.schedule.kicks[k].time - r.schedule.kicks[k - 1].time), opt.min_gap * (1 - 1e-12));
    EXPECT_EQ(r.schedule.kicks[k].sign, -r.schedule.kicks[k - 1].sign);
  }

  // Same search with two workers gives the same schedule.
  ScheduleSearchOptions par = opt;
  par.workers = 2;
  const auto p = gate_schedule_search(28, nu, eta, kPi / 4, par);
  EXPECT_EQ(p.best_restart, r.best_restart);
  EXPECT_EQ(p.schedule.kicks.back().time, r.schedule.kicks.back().time);

  const HilbertSpace space(2, 30);
  expect_algebra_matches_numeric(r.schedule, 30, 1e-8);
  const ComplexMatrix u = simulate_schedule_numeric(r.schedule, space, KickModelSpec{}, 0.0);
  // Closure: block diagonal in the spin basis on the evaluated Fock levels,
  // with the mode left alone.
  double off = 0.0;
  for (int s1 = 0; s1 < 4; ++s1)
    for (int s2 = 0; s2 < 4; ++s2)
      for (int n = 0; n < 7; ++n)
        for (int m = 0; m < 7; ++m) {
          if (s1 == s2 && n == m) continue;
          off = std::max(off, std::abs(u(space.index(s1, n), space.index(s2, m))));
        }
  EXPECT_LE(off, 1e-8);
  EXPECT_LE(process_fidelity(u, conditional_phase_gate(space, kPi / 4), space, 7).infidelity, 1e-10);
}

TEST(GateSimulation, CompositeKicksSuppressSharedNoise) {
  const double nu = 2 * kPi * 1e5, eta = 0.06;
  ScheduleSearchOptions opt;
  opt.min_gap = gate_min_gap(nu);
  const auto r = gate_schedule_search(28, nu, eta, kPi / 4, opt);
  ASSERT_TRUE(r.success);
  const HilbertSpace space(2, 30);
  const ComplexMatrix target = conditional_phase_gate(space, kPi / 4);
  KickModelSpec bare, comp;
  comp.model = KickModel::composite_five;
  const double if_bare = process_fidelity(simulate_schedule_numeric(r.schedule, space, bare, 0.02), target, space, 7).infidelity;
  const double if_comp = process_fidelity(simulate_schedule_numeric(r.schedule, space, comp, 0.02), target, space, 7).infidelity;
  EXPECT_LT(if_comp, if_bare);
  EXPECT_LT(if_comp, 0.01 * if_bare);
}

TEST(ConditionalPhaseGate, Diagonal) {
  const HilbertSpace space(2, 3);
  const ComplexMatrix g = conditional_phase_gate(space, 0.3);
  EXPECT_NEAR(std::arg(g(space.index(0, 2), space.index(0, 2))), 0.3, 1e-15);
  EXPECT_NEAR(std::arg(g(space.index(1, 0), space.index(1, 0))), -0.3, 1e-15);
  EXPECT_THROW(conditional_phase_gate(HilbertSpace(1, 3), 0.3), std::invalid_argument);
}
