#pragma once

// Batch experiments: a JSON config in, a CSV table plus a JSON sidecar out.
// Needs nlohmann/json on the include path (the core headers do not).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "kickfocus/composite.hpp"
#include "kickfocus/dynamics.hpp"
#include "kickfocus/errors.hpp"
#include "kickfocus/fidelity.hpp"
#include "kickfocus/kickalgebra.hpp"
#include "kickfocus/noise.hpp"
#include "kickfocus/optimize.hpp"

#ifndef KICKFOCUS_VERSION
#define KICKFOCUS_VERSION "unknown"
#endif

namespace kickfocus {

using Json = nlohmann::ordered_json;

enum class ExperimentKind {
  sweep_trap_fig1,
  sweep_trap_fig2,
  sweep_sts_fig3a,
  sweep_sts_fig3b,
  composite_verify,
  gate_eval,
  calibrate
};

inline const std::vector<std::pair<ExperimentKind, std::string>>& experiment_names() {
  static const std::vector<std::pair<ExperimentKind, std::string>> names = {
      {ExperimentKind::sweep_trap_fig1, "sweep_trap_fig1"},
      {ExperimentKind::sweep_trap_fig2, "sweep_trap_fig2"},
      {ExperimentKind::sweep_sts_fig3a, "sweep_sts_fig3a"},
      {ExperimentKind::sweep_sts_fig3b, "sweep_sts_fig3b"},
      {ExperimentKind::composite_verify, "composite_verify"},
      {ExperimentKind::gate_eval, "gate_eval"},
      {ExperimentKind::calibrate, "calibrate"}};
  return names;
}

inline std::string to_string(ExperimentKind k) {
  for (const auto& [kind, name] : experiment_names()) {
    if (kind == k) return name;
  }
  return "?";
}

/// Linear grid from `start` to `stop` inclusive, or logarithmic when `log`.
inline std::vector<double> make_grid(double start, double stop, int points, bool log) {
  if (points < 1) throw ConfigError("grid needs at least one point");
  if (log && !(start > 0.0 && stop > 0.0)) throw ConfigError("logarithmic grid needs positive ends");
  std::vector<double> g;
  for (int i = 0; i < points; ++i) {
    const double s = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
    g.push_back(log ? std::exp(std::log(start) + s * (std::log(stop) - std::log(start)))
                    : start + s * (stop - start));
  }
  return g;
}

struct PhysicalConfig {
  std::vector<double> nu_grid = make_grid(1e3, 1e6, 13, true);  // nu / 2 pi in Hz
  std::vector<double> eps_grid = make_grid(0.0, 0.05, 11, false);
  double nu_hz = 1e5;  // fixed nu / 2 pi for STS sweeps and gates
  double eta = 0.012;
  double omega_hf_hz = 12.6e9;  // hyperfine gap / 2 pi
  double tau = 100e-9;          // rotating-frame pulse
  double comb_tau = 10e-12;     // comb pulse
  int n_splitters = 8;
  int harmonic = 3;
  int n_ions = 2;
  int fock_cutoff = default_fock_cutoff;
  int eval_fock_levels = default_eval_fock_levels;
};

struct CompositeConfig {
  double theta = sdk_refocusing_theta();
  double spacing_factor = 1.0;  // times tau, or times the train duration
  std::vector<double> verify_thetas = {sdk_refocusing_theta(), 0.0, std::numbers::pi / 2};
};

struct AdjustConfig {
  bool enabled = true;
  int budget = default_adjustment_budget;
  bool freeze_across_eps = false;  // adjust once at eps = 0 and reuse
};

struct CombConfig {
  CombOptions options;
  bool calibrate = false;  // replace the nominal resonance by calibrate_train
  int grid_points = 11;
  int refine_budget = 120;
};

struct GateConfig {
  int n_kicks = 28;
  double chi = std::numbers::pi / 4;
  double eta = 0.06;
  double min_gap_tau = 2.0;  // smallest kick spacing in units of tau
  std::vector<std::string> models = {"ideal", "finite_pulse", "comb_train"};
  double epsilon = 0.0;
  int restarts = 20;
  int budget_per_restart = 40000;
  std::optional<KickSchedule> schedule;  // skips the search when given
};

struct CalibrateConfig {
  std::string target = "train";  // or "theta"
  std::vector<double> g_tau_grid = {0.0, std::numbers::pi / 4, std::numbers::pi / 2, std::numbers::pi,
                                    2 * std::numbers::pi};
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::composite_verify;
  std::string output_path;
  std::uint64_t seed = 1;
  int workers = 1;
  bool plot_script = false;
  PhysicalConfig physical;
  NoiseModel noise;
  NoiseConvention convention = NoiseConvention::fractional;
  CompositeConfig composite;
  AdjustConfig adjust;
  RotatingFrameOptions integrator;
  CombConfig comb;
  GateConfig gate;
  CalibrateConfig calibrate;
};

namespace detail {

// Reads one JSON object, remembers which keys were used and rejects the rest.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  double real(const std::string& key, double def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_number()) fail(key, "expected a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) fail(key, "must be finite");
    return x;
  }

  int integer(const std::string& key, int def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_number_integer()) fail(key, "expected an integer");
    return v->get<int>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      fail(key, "expected a non-negative integer");
    }
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_boolean()) fail(key, "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_string()) fail(key, "expected a string");
    return v->get<std::string>();
  }

  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_array()) fail(key, "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string()) fail(key, "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  /// Explicit list of numbers, or {"start", "stop", "points", "spacing"}.
  std::vector<double> grid(const std::string& key, const std::vector<double>& def) {
    const Json* v = take(key);
    if (!v) return def;
    std::vector<double> out;
    if (v->is_array()) {
      for (const auto& e : *v) {
        if (!e.is_number()) fail(key, "grid entries must be numbers");
        out.push_back(e.get<double>());
      }
    } else if (v->is_object()) {
      Section g(*v, path_ + key + ".");
      const double start = g.real("start", 0.0);
      const double stop = g.real("stop", 0.0);
      const int points = g.integer("points", 0);
      const std::string spacing = g.string("spacing", "linear");
      g.finish();
      if (spacing != "linear" && spacing != "log") fail(key, "spacing must be \"linear\" or \"log\"");
      if (points < 1) fail(key, "grid must be nonempty");
      try {
        out = make_grid(start, stop, points, spacing == "log");
      } catch (const ConfigError& e) {
        fail(key, e.what());
      }
    } else {
      fail(key, "expected an array or a grid object");
    }
    if (out.empty()) fail(key, "grid must be nonempty");
    for (double x : out) {
      if (!std::isfinite(x)) fail(key, "grid entries must be finite");
    }
    return out;
  }

  const Json* object(const std::string& key) {
    const Json* v = take(key);
    if (v && !v->is_object()) fail(key, "expected an object");
    return v;
  }

  const Json* raw(const std::string& key) { return take(key); }

  std::string field(const std::string& key) const { return path_ + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError("field '" + field(key) + "': " + msg);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown field '" + field(key) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : "field '" + path_ + "': "; }

  const Json* take(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline void require(bool ok, const std::string& field, const std::string& msg) {
  if (!ok) throw ConfigError("field '" + field + "': " + msg);
}

inline KickSchedule parse_schedule(const Json& j, const std::string& path) {
  Section s(j, path);
  KickSchedule out;
  const double nu_hz = s.real("nu_hz", 0.0);
  const double eta = s.real("eta", 0.0);
  const std::vector<double> times = s.grid("times", {});
  const Json* signs = s.raw("signs");
  s.finish();
  require(nu_hz > 0.0, path + "nu_hz", "must be positive");
  require(!times.empty(), path + "times", "must be nonempty");
  require(signs && signs->is_array() && signs->size() == times.size(), path + "signs",
          "expected one sign per kick");
  out.nu = 2.0 * std::numbers::pi * nu_hz;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const Json& e = (*signs)[k];
    require(e.is_number_integer() && std::abs(e.get<int>()) == 1, path + "signs", "entries must be +1 or -1");
    out.kicks.push_back({times[k], e.get<int>(), eta});
  }
  try {
    out.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("field '" + path + "': " + e.what());
  }
  return out;
}

inline Json schedule_to_json(const KickSchedule& s) {
  Json j;
  j["nu_hz"] = s.nu / (2.0 * std::numbers::pi);
  j["eta"] = s.kicks.empty() ? 0.0 : s.kicks.front().eta;
  Json times = Json::array(), signs = Json::array();
  for (const Kick& k : s.kicks) {
    times.push_back(k.time);
    signs.push_back(k.sign);
  }
  j["times"] = times;
  j["signs"] = signs;
  return j;
}

inline const std::vector<std::string>& kick_model_names() {
  static const std::vector<std::string> names = {"ideal", "finite_pulse", "composite_five",
                                                 "composite_five_finite", "comb_train"};
  return names;
}

inline KickModel kick_model_from_string(const std::string& s) {
  const auto& names = kick_model_names();
  const auto it = std::find(names.begin(), names.end(), s);
  if (it == names.end()) throw ConfigError("unknown kick model '" + s + "'");
  return static_cast<KickModel>(it - names.begin());
}

}  // namespace detail

/// Parses and validates a config object. Errors name the offending field.
inline ExperimentConfig parse_config(const Json& j) {
  using detail::require;
  ExperimentConfig c;
  detail::Section root(j, "");
  const std::string name = root.string("experiment", "");
  bool known = false;
  for (const auto& [kind, n] : experiment_names()) {
    if (n == name) {
      c.experiment = kind;
      known = true;
    }
  }
  if (!known) root.fail("experiment", name.empty() ? "missing" : "unknown experiment '" + name + "'");
  c.output_path = root.string("output_path", "");
  c.seed = root.unsigned_integer("seed", c.seed);
  c.workers = root.integer("workers", c.workers);
  c.plot_script = root.boolean("plot_script", c.plot_script);
  require(c.workers >= 1, "workers", "must be >= 1");

  if (const Json* p = root.object("physical")) {
    detail::Section s(*p, "physical.");
    PhysicalConfig& q = c.physical;
    q.nu_grid = s.grid("nu_grid", q.nu_grid);
    q.eps_grid = s.grid("eps_grid", q.eps_grid);
    q.nu_hz = s.real("nu_hz", q.nu_hz);
    q.eta = s.real("eta", q.eta);
    q.omega_hf_hz = s.real("omega_hf_hz", q.omega_hf_hz);
    q.tau = s.real("tau", q.tau);
    q.comb_tau = s.real("comb_tau", q.comb_tau);
    q.n_splitters = s.integer("N", q.n_splitters);
    q.harmonic = s.integer("harmonic", q.harmonic);
    q.n_ions = s.integer("n_ions", q.n_ions);
    q.fock_cutoff = s.integer("fock_cutoff", q.fock_cutoff);
    q.eval_fock_levels = s.integer("eval_fock_levels", q.eval_fock_levels);
    s.finish();
  }
  {
    const PhysicalConfig& q = c.physical;
    for (double v : q.nu_grid) require(v > 0.0, "physical.nu_grid", "entries must be positive");
    for (double v : q.eps_grid) {
      require(v >= 0.0 && v < 0.5, "physical.eps_grid", "entries must lie in [0, 0.5)");
    }
    require(q.nu_hz > 0.0, "physical.nu_hz", "must be positive");
    require(q.eta >= 0.0 && q.eta < 1.0, "physical.eta", "must lie in [0, 1)");
    require(q.omega_hf_hz > 0.0, "physical.omega_hf_hz", "must be positive");
    require(q.tau > 0.0, "physical.tau", "must be positive");
    require(q.comb_tau > 0.0, "physical.comb_tau", "must be positive");
    require(q.n_splitters >= 1 && q.n_splitters <= 14, "physical.N", "must lie in [1, 14]");
    require(q.harmonic >= 1, "physical.harmonic", "must be >= 1");
    require(q.n_ions == 1 || q.n_ions == 2, "physical.n_ions", "must be 1 or 2");
    require(q.fock_cutoff >= 2, "physical.fock_cutoff", "must be >= 2");
    require(q.eval_fock_levels >= 1 && q.eval_fock_levels <= q.fock_cutoff, "physical.eval_fock_levels",
            "must lie in [1, fock_cutoff]");
  }

  if (const Json* p = root.object("noise")) {
    detail::Section s(*p, "noise.");
    try {
      c.noise.kind = noise_kind_from_string(s.string("kind", to_string(c.noise.kind)));
    } catch (const std::invalid_argument& e) {
      s.fail("kind", e.what());
    }
    c.noise.magnitude = s.real("magnitude", c.noise.magnitude);
    c.noise.n_samples = s.integer("n_samples", c.noise.n_samples);
    const std::string conv = s.string("convention", "fractional");
    if (conv == "fractional") {
      c.convention = NoiseConvention::fractional;
    } else if (conv == "absolute") {
      c.convention = NoiseConvention::absolute;
    } else {
      s.fail("convention", "must be \"fractional\" or \"absolute\"");
    }
    s.finish();
  }
  require(c.noise.magnitude >= 0.0 && c.noise.magnitude < 0.5, "noise.magnitude", "must lie in [0, 0.5)");
  require(c.noise.n_samples >= 1, "noise.n_samples", "must be >= 1");

  if (const Json* p = root.object("composite")) {
    detail::Section s(*p, "composite.");
    c.composite.theta = s.real("theta", c.composite.theta);
    c.composite.spacing_factor = s.real("spacing_factor", c.composite.spacing_factor);
    c.composite.verify_thetas = s.grid("verify_thetas", c.composite.verify_thetas);
    s.finish();
  }
  require(c.composite.spacing_factor >= 1.0, "composite.spacing_factor", "must be >= 1 (pulses may not overlap)");

  if (const Json* p = root.object("adjust")) {
    detail::Section s(*p, "adjust.");
    c.adjust.enabled = s.boolean("enabled", c.adjust.enabled);
    c.adjust.budget = s.integer("budget", c.adjust.budget);
    c.adjust.freeze_across_eps = s.boolean("freeze_across_eps", c.adjust.freeze_across_eps);
    s.finish();
  }
  require(c.adjust.budget >= 50, "adjust.budget", "must be >= 50");

  if (const Json* p = root.object("integrator")) {
    detail::Section s(*p, "integrator.");
    c.integrator.initial_steps = s.integer("initial_steps", c.integrator.initial_steps);
    c.integrator.max_doublings = s.integer("max_doublings", c.integrator.max_doublings);
    c.integrator.tolerance = s.real("tolerance", c.integrator.tolerance);
    c.integrator.order = s.integer("order", c.integrator.order);
    s.finish();
  }
  require(c.integrator.initial_steps >= 1, "integrator.initial_steps", "must be >= 1");
  require(c.integrator.max_doublings >= 1, "integrator.max_doublings", "must be >= 1");
  require(c.integrator.tolerance > 0.0, "integrator.tolerance", "must be positive");
  require(c.integrator.order == 2 || c.integrator.order == 4, "integrator.order", "must be 2 or 4");

  if (const Json* p = root.object("comb")) {
    detail::Section s(*p, "comb.");
    CombOptions& o = c.comb.options;
    o.min_steps_per_window = s.integer("min_steps_per_window", o.min_steps_per_window);
    o.steps_per_hf_period = s.integer("steps_per_hf_period", o.steps_per_hf_period);
    o.sub_windows = s.integer("sub_windows", o.sub_windows);
    o.max_doublings = s.integer("max_doublings", o.max_doublings);
    o.tolerance = s.real("tolerance", o.tolerance);
    c.comb.calibrate = s.boolean("calibrate", c.comb.calibrate);
    c.comb.grid_points = s.integer("grid_points", c.comb.grid_points);
    c.comb.refine_budget = s.integer("refine_budget", c.comb.refine_budget);
    s.finish();
  }
  {
    const CombOptions& o = c.comb.options;
    require(o.min_steps_per_window >= 1, "comb.min_steps_per_window", "must be >= 1");
    require(o.steps_per_hf_period >= 1, "comb.steps_per_hf_period", "must be >= 1");
    require(o.sub_windows >= 1, "comb.sub_windows", "must be >= 1");
    require(o.max_doublings >= 1, "comb.max_doublings", "must be >= 1");
    require(o.tolerance > 0.0, "comb.tolerance", "must be positive");
    require(c.comb.grid_points >= 2, "comb.grid_points", "must be >= 2");
    require(c.comb.refine_budget >= 1, "comb.refine_budget", "must be >= 1");
  }

  if (const Json* p = root.object("gate")) {
    detail::Section s(*p, "gate.");
    GateConfig& g = c.gate;
    g.n_kicks = s.integer("n_kicks", g.n_kicks);
    g.chi = s.real("chi", g.chi);
    g.eta = s.real("eta", g.eta);
    g.min_gap_tau = s.real("min_gap_tau", g.min_gap_tau);
    g.models = s.strings("models", g.models);
    g.epsilon = s.real("epsilon", g.epsilon);
    g.restarts = s.integer("restarts", g.restarts);
    g.budget_per_restart = s.integer("budget_per_restart", g.budget_per_restart);
    if (const Json* sched = s.object("schedule")) g.schedule = detail::parse_schedule(*sched, "gate.schedule.");
    s.finish();
    for (const auto& m : g.models) {
      try {
        detail::kick_model_from_string(m);
      } catch (const ConfigError& e) {
        s.fail("models", e.what());
      }
    }
  }
  {
    const GateConfig& g = c.gate;
    require(g.n_kicks >= 2 && g.n_kicks % 2 == 0, "gate.n_kicks", "must be even and >= 2");
    require(g.eta > 0.0 && g.eta < 1.0, "gate.eta", "must lie in (0, 1)");
    require(g.min_gap_tau >= 0.0, "gate.min_gap_tau", "must be >= 0");
    require(!g.models.empty(), "gate.models", "must be nonempty");
    require(std::abs(g.epsilon) < 0.5, "gate.epsilon", "must satisfy |epsilon| < 0.5");
    require(g.restarts >= 1, "gate.restarts", "must be >= 1");
    require(g.budget_per_restart >= 10, "gate.budget_per_restart", "must be >= 10");
  }

  if (const Json* p = root.object("calibrate")) {
    detail::Section s(*p, "calibrate.");
    c.calibrate.target = s.string("target", c.calibrate.target);
    c.calibrate.g_tau_grid = s.grid("g_tau_grid", c.calibrate.g_tau_grid);
    s.finish();
  }
  require(c.calibrate.target == "train" || c.calibrate.target == "theta", "calibrate.target",
          "must be \"train\" or \"theta\"");
  for (double g : c.calibrate.g_tau_grid) {
    require(g >= 0.0 && g <= 4 * std::numbers::pi, "calibrate.g_tau_grid", "entries must lie in [0, 4 pi]");
  }
  root.finish();
  return c;
}

/// Reads a config file. JSON with // and /* */ comments; parse errors carry
/// the line and column.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  Json j;
  try {
    j = Json::parse(buf.str(), nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return parse_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Fully resolved config, readable by parse_config.
inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["experiment"] = to_string(c.experiment);
  j["output_path"] = c.output_path;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["plot_script"] = c.plot_script;
  const PhysicalConfig& q = c.physical;
  j["physical"] = {{"nu_grid", q.nu_grid},
                   {"eps_grid", q.eps_grid},
                   {"nu_hz", q.nu_hz},
                   {"eta", q.eta},
                   {"omega_hf_hz", q.omega_hf_hz},
                   {"tau", q.tau},
                   {"comb_tau", q.comb_tau},
                   {"N", q.n_splitters},
                   {"harmonic", q.harmonic},
                   {"n_ions", q.n_ions},
                   {"fock_cutoff", q.fock_cutoff},
                   {"eval_fock_levels", q.eval_fock_levels}};
  j["noise"] = {{"kind", to_string(c.noise.kind)},
                {"magnitude", c.noise.magnitude},
                {"n_samples", c.noise.n_samples},
                {"convention", c.convention == NoiseConvention::fractional ? "fractional" : "absolute"}};
  j["composite"] = {{"theta", c.composite.theta},
                    {"spacing_factor", c.composite.spacing_factor},
                    {"verify_thetas", c.composite.verify_thetas}};
  j["adjust"] = {{"enabled", c.adjust.enabled},
                 {"budget", c.adjust.budget},
                 {"freeze_across_eps", c.adjust.freeze_across_eps}};
  j["integrator"] = {{"initial_steps", c.integrator.initial_steps},
                     {"max_doublings", c.integrator.max_doublings},
                     {"tolerance", c.integrator.tolerance},
                     {"order", c.integrator.order}};
  const CombOptions& o = c.comb.options;
  j["comb"] = {{"min_steps_per_window", o.min_steps_per_window},
               {"steps_per_hf_period", o.steps_per_hf_period},
               {"sub_windows", o.sub_windows},
               {"max_doublings", o.max_doublings},
               {"tolerance", o.tolerance},
               {"calibrate", c.comb.calibrate},
               {"grid_points", c.comb.grid_points},
               {"refine_budget", c.comb.refine_budget}};
  const GateConfig& g = c.gate;
  j["gate"] = {{"n_kicks", g.n_kicks},
               {"chi", g.chi},
               {"eta", g.eta},
               {"min_gap_tau", g.min_gap_tau},
               {"models", g.models},
               {"epsilon", g.epsilon},
               {"restarts", g.restarts},
               {"budget_per_restart", g.budget_per_restart}};
  if (g.schedule) j["gate"]["schedule"] = detail::schedule_to_json(*g.schedule);
  j["calibrate"] = {{"target", c.calibrate.target}, {"g_tau_grid", c.calibrate.g_tau_grid}};
  return j;
}

// ---------------------------------------------------------------------------
// Tables and output

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  Json results = Json::object();  // experiment-level extras for the sidecar
};

inline std::string format_cell(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::string to_csv(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(cells[i]);
    }
    out += "\r\n";
  };
  line(t.columns);
  for (const auto& r : t.rows) line(r);
  return out;
}

/// Writes `content` next to `path` and renames it into place.
inline void write_atomically(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.close();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Worker pool

/// Evaluates f(0..n-1) on `workers` threads; results come back in index
/// order. The exception of the lowest failing index is rethrown.
template <class F>
auto parallel_map(int n, int workers, F f) -> std::vector<decltype(f(0))> {
  using R = decltype(f(0));
  std::vector<std::optional<R>> slots(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::mutex mutex;
  int next = 0;
  auto worker = [&] {
    for (;;) {
      int i;
      {
        std::lock_guard lock(mutex);
        if (next >= n) return;
        i = next++;
      }
      try {
        slots[i].emplace(f(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int w = std::max(1, std::min(workers, n));
  if (w == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < w; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<R> out;
  for (int i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

/// Independent per-point seed (splitmix64 finalizer), so results do not
/// depend on which worker handled the point.
inline std::uint64_t point_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Experiments

namespace detail {

struct Mean {
  double sum = 0.0, sum_sq = 0.0;
  int n = 0;
  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return sum / n; }
  double stderr_() const {
    if (n < 2) return 0.0;
    const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1));
    return std::sqrt(var / n);
  }
};

inline double two_pi() { return 2.0 * std::numbers::pi; }

// Which kick the SDK sweeps build: one rotating-frame pulse or one comb train.
class SdkSource {
 public:
  SdkSource(const ExperimentConfig& c, bool comb, Json& results) : c_(c), comb_(comb) {
    const PhysicalConfig& q = c.physical;
    if (comb_) {
      train_ = resonant_train(q.n_splitters, q.comb_tau, two_pi() * q.omega_hf_hz, q.harmonic);
      if (c.comb.calibrate) {
        TrainCalibrationOptions opt;
        opt.grid_points = c.comb.grid_points;
        opt.refine_budget = c.comb.refine_budget;
        opt.eval_fock_levels = q.eval_fock_levels;
        const auto cal = calibrate_train(train_, TrapSpec{0.0, q.eta}, HilbertSpace(q.n_ions, q.fock_cutoff), opt);
        train_ = cal.train;
        results["train_calibration"] = {{"if_nominal", cal.template_infidelity},
                                        {"if_calibrated", cal.infidelity},
                                        {"evaluations", cal.evaluations}};
      }
      results["train"] = {{"pulse_count", train_.pulse_count()},
                          {"inter_pulse_delay_s", train_.inter_pulse_delay},
                          {"aom_frequency_hz", train_.aom_frequency / two_pi()},
                          {"kick_phase", train_.kick_phase},
                          {"per_pulse_area", train_.pulse.area},
                          {"duration_s", train_.duration()}};
    }
  }

  double duration() const { return comb_ ? train_.duration() : c_.physical.tau; }
  double spacing() const { return c_.composite.spacing_factor * duration(); }

  /// Kick centred at 0 with axis phase 0 under fractional area error f.
  ComplexMatrix kick(const HilbertSpace& space, double nu, double f) const {
    const TrapSpec trap{nu, c_.physical.eta};
    if (comb_) {
      const ComplexMatrix u = integrate_comb_train(train_, trap, space, f, c_.comb.options);
      return rotate_phase(space, u, -train_.kick_phase);
    }
    PulseSpec p;
    p.tau = c_.physical.tau;
    return integrate_rotating_frame(p, trap, space, f, c_.integrator);
  }

  ComplexMatrix composite(const HilbertSpace& space, double nu, const ComplexMatrix& kick) const {
    return place_kicks(space, kick, nu, five_pulse_centers(spacing()), five_pulse_phases(c_.composite.theta));
  }

 private:
  const ExperimentConfig& c_;
  bool comb_;
  TrainSpec train_;
};

struct SdkPoint {
  double if_single = 0, if_composite = 0, if_adjusted = 0;
  double se_single = 0, se_composite = 0, se_adjusted = 0;
  double eta_eff = 0, phase_eff = 0;
  int evaluations = 0;
};

// One (nu, noise value) point. `frozen` holds (eta_eff, phase_eff) when the
// adjustment is reused rather than fitted here.
inline SdkPoint sdk_point(const ExperimentConfig& c, const SdkSource& src, const HilbertSpace& space,
                          double nu, double noise_value, std::uint64_t seed,
                          std::optional<std::pair<double, double>> frozen) {
  const int levels = c.physical.eval_fock_levels;
  const double eta = c.physical.eta;
  const ComplexMatrix target = target_sdk(space, eta, 0.0);
  SdkPoint out;
  const bool mc = c.noise.kind != NoiseKind::deterministic_sweep;
  if (mc && !frozen && c.adjust.enabled) {
    const ComplexMatrix u5 = src.composite(space, nu, src.kick(space, nu, 0.0));
    const auto adj = adjust_displacement(u5, space, eta, c.adjust.budget, levels);
    frozen = std::pair{adj.eta_eff, adj.phase_eff};
    out.evaluations = adj.evaluations;
  }

  NoiseModel model = c.noise;
  model.magnitude = noise_value;
  model.seed = seed;
  Mean single, comp, adjusted;
  for (double eps : sample_shots(model)) {
    const double f = fractional_error(eps, c.convention);
    const ComplexMatrix u1 = src.kick(space, nu, f);
    const ComplexMatrix u5 = src.composite(space, nu, u1);
    single.add(process_fidelity(u1, target, space, levels).infidelity);
    const double if5 = process_fidelity(u5, target, space, levels).infidelity;
    comp.add(if5);
    if (!c.adjust.enabled) {
      adjusted.add(if5);
      out.eta_eff = eta;
    } else if (frozen) {
      out.eta_eff = frozen->first;
      out.phase_eff = frozen->second;
      adjusted.add(process_fidelity(u5, target_sdk(space, frozen->first, frozen->second), space, levels).infidelity);
    } else {
      const auto adj = adjust_displacement(u5, space, eta, c.adjust.budget, levels);
      out.eta_eff = adj.eta_eff;
      out.phase_eff = adj.phase_eff;
      out.evaluations = adj.evaluations;
      adjusted.add(adj.infidelity_after());
    }
  }
  out.if_single = single.mean();
  out.if_composite = comp.mean();
  out.if_adjusted = adjusted.mean();
  out.se_single = single.stderr_();
  out.se_composite = comp.stderr_();
  out.se_adjusted = adjusted.stderr_();
  return out;
}

inline Table sdk_sweep(const ExperimentConfig& c, bool comb, bool over_nu) {
  Table t;
  const SdkSource src(c, comb, t.results);
  const HilbertSpace space(c.physical.n_ions, c.physical.fock_cutoff);
  const bool mc = c.noise.kind != NoiseKind::deterministic_sweep;
  const std::vector<double>& grid = over_nu ? c.physical.nu_grid : c.physical.eps_grid;

  std::optional<std::pair<double, double>> frozen;
  if (!over_nu && c.adjust.enabled && (c.adjust.freeze_across_eps || mc)) {
    const double nu = two_pi() * c.physical.nu_hz;
    const ComplexMatrix u5 = src.composite(space, nu, src.kick(space, nu, 0.0));
    const auto adj = adjust_displacement(u5, space, c.physical.eta, c.adjust.budget, c.physical.eval_fock_levels);
    frozen = std::pair{adj.eta_eff, adj.phase_eff};
    t.results["frozen_adjustment"] = {{"eta_eff", adj.eta_eff}, {"phase_eff", adj.phase_eff},
                                      {"if_after", adj.infidelity_after()}};
  }

  const std::string duration_col = comb ? "nu_t_train_over_2pi" : "nu_tau_over_2pi";
  const std::string noise_col = mc ? "noise_magnitude" : "epsilon";
  t.columns = over_nu ? std::vector<std::string>{"nu_over_2pi_hz", duration_col, noise_col}
                      : std::vector<std::string>{noise_col, "nu_over_2pi_hz", duration_col};
  for (const char* col : {"if_single", "if_composite5", "if_adjusted"}) t.columns.push_back(col);
  if (mc) {
    for (const char* col : {"if_single_stderr", "if_composite5_stderr", "if_adjusted_stderr", "n_samples"}) {
      t.columns.push_back(col);
    }
  }
  for (const char* col : {"eta_eff", "phase_eff", "adjust_evaluations"}) t.columns.push_back(col);

  t.rows = parallel_map(static_cast<int>(grid.size()), c.workers, [&](int i) {
    const double nu_hz = over_nu ? grid[i] : c.physical.nu_hz;
    const double noise_value = over_nu ? c.noise.magnitude : grid[i];
    const SdkPoint p =
        sdk_point(c, src, space, two_pi() * nu_hz, noise_value, point_seed(c.seed, i), frozen);
    const double x = nu_hz * src.duration();
    std::vector<double> v = over_nu ? std::vector<double>{nu_hz, x, noise_value}
                                    : std::vector<double>{noise_value, nu_hz, x};
    for (double y : {p.if_single, p.if_composite, p.if_adjusted}) v.push_back(y);
    if (mc) {
      for (double y : {p.se_single, p.se_composite, p.se_adjusted}) v.push_back(y);
      v.push_back(c.noise.n_samples);
    }
    for (double y : {p.eta_eff, p.phase_eff, static_cast<double>(p.evaluations)}) v.push_back(y);
    std::vector<std::string> row;
    for (double y : v) row.push_back(format_cell(y));
    return row;
  });
  return t;
}

inline Table composite_verify(const ExperimentConfig& c) {
  Table t;
  t.columns = {"theta", "cos_theta", "first_coeff", "second_coeff", "cancels_first_order"};
  const HilbertSpace space(c.physical.n_ions, c.physical.fock_cutoff);
  const auto bare = error_series(bare_sequence(PulseKind::sdk, std::numbers::pi / 2), space, c.physical.eta);
  t.results["bare_first_coeff"] = bare.first_coeff;
  t.rows = parallel_map(static_cast<int>(c.composite.verify_thetas.size()), c.workers, [&](int i) {
    const double theta = c.composite.verify_thetas[i];
    const auto s = error_series(five_pulse_sdk(theta), space, c.physical.eta);
    return std::vector<std::string>{format_cell(theta), format_cell(std::cos(theta)), format_cell(s.first_coeff),
                                    format_cell(s.second_coeff), s.first_coeff <= 1e-8 ? "1" : "0"};
  });
  return t;
}

inline Table gate_eval(const ExperimentConfig& c) {
  Table t;
  const GateConfig& g = c.gate;
  const PhysicalConfig& q = c.physical;
  const double nu = two_pi() * q.nu_hz;
  const HilbertSpace space(2, q.fock_cutoff);

  KickSchedule schedule;
  bool success = true;
  if (g.schedule) {
    schedule = *g.schedule;
    t.results["search"] = {{"performed", false}};
  } else {
    ScheduleSearchOptions opt;
    opt.restarts = g.restarts;
    opt.budget_per_restart = g.budget_per_restart;
    opt.seed = c.seed;
    opt.workers = c.workers;
    opt.min_gap = g.min_gap_tau * q.tau * nu;
    const auto r = gate_schedule_search(g.n_kicks, nu, g.eta, g.chi, opt);
    schedule = r.schedule;
    success = r.success;
    t.results["search"] = {{"performed", true},    {"success", r.success},       {"closure", r.closure},
                           {"chi", r.chi},         {"chi_error", r.chi_error},   {"objective", r.objective},
                           {"best_restart", r.best_restart}, {"message", r.message}};
    if (!r.success) std::cerr << "warning: gate search: " << r.message << "\n";
  }
  t.results["schedule"] = schedule_to_json(schedule);
  const BranchResult algebra = compose_schedule(schedule);

  KickModelSpec spec;
  spec.pulse.tau = q.tau;
  spec.theta = c.composite.theta;
  spec.composite_spacing = c.composite.spacing_factor * q.tau;
  spec.rotating = c.integrator;
  spec.comb = c.comb.options;
  const bool needs_train = std::find(g.models.begin(), g.models.end(), "comb_train") != g.models.end();
  if (needs_train) {
    spec.train = resonant_train(q.n_splitters, q.comb_tau, two_pi() * q.omega_hf_hz, q.harmonic);
    if (c.comb.calibrate) {
      TrainCalibrationOptions opt;
      opt.grid_points = c.comb.grid_points;
      opt.refine_budget = c.comb.refine_budget;
      opt.eval_fock_levels = q.eval_fock_levels;
      spec.train = calibrate_train(spec.train, TrapSpec{0.0, g.eta}, space, opt).train;
    }
  }

  const ComplexMatrix target = conditional_phase_gate(space, g.chi);
  t.columns = {"model", "epsilon", "closure", "chi", "chi_error", "search_success", "gate_if"};
  t.rows = parallel_map(static_cast<int>(g.models.size()), c.workers, [&](int i) {
    KickModelSpec m = spec;
    m.model = detail::kick_model_from_string(g.models[i]);
    const ComplexMatrix u = simulate_schedule_numeric(schedule, space, m, g.epsilon);
    const double gate_if = process_fidelity(u, target, space, q.eval_fock_levels).infidelity;
    return std::vector<std::string>{g.models[i],
                                    format_cell(g.epsilon),
                                    format_cell(algebra.closure()),
                                    format_cell(algebra.chi),
                                    format_cell(std::abs(algebra.chi - g.chi)),
                                    success ? "1" : "0",
                                    format_cell(gate_if)};
  });
  return t;
}

inline Table calibrate(const ExperimentConfig& c) {
  Table t;
  const PhysicalConfig& q = c.physical;
  if (c.calibrate.target == "theta") {
    t.columns = {"g_tau", "theta_single_body", "theta_two_body"};
    t.rows = parallel_map(static_cast<int>(c.calibrate.g_tau_grid.size()), c.workers, [&](int i) {
      const double g = c.calibrate.g_tau_grid[i];
      return std::vector<std::string>{format_cell(g), format_cell(calibrate_theta(PulseKind::single_body, g)),
                                      format_cell(calibrate_theta(PulseKind::two_body, g))};
    });
    return t;
  }
  const TrainSpec nominal = resonant_train(q.n_splitters, q.comb_tau, two_pi() * q.omega_hf_hz, q.harmonic);
  TrainCalibrationOptions opt;
  opt.grid_points = c.comb.grid_points;
  opt.refine_budget = c.comb.refine_budget;
  opt.eval_fock_levels = q.eval_fock_levels;
  const auto cal = calibrate_train(nominal, TrapSpec{0.0, q.eta}, HilbertSpace(q.n_ions, q.fock_cutoff), opt);
  const CombPhases p0 = comb_phases(nominal), p1 = comb_phases(cal.train);
  t.columns = {"N", "harmonic", "phi_resonant_nominal", "phi_counter_nominal", "phi_resonant", "phi_counter",
               "inter_pulse_delay_s", "aom_frequency_hz", "kick_phase", "per_pulse_area", "if_nominal",
               "if_calibrated", "evaluations"};
  std::vector<std::string> row;
  for (double v : {static_cast<double>(q.n_splitters), static_cast<double>(q.harmonic), p0.resonant, p0.counter,
                   p1.resonant, p1.counter, cal.train.inter_pulse_delay, cal.train.aom_frequency / two_pi(),
                   cal.train.kick_phase, cal.train.pulse.area, cal.template_infidelity, cal.infidelity,
                   static_cast<double>(cal.evaluations)}) {
    row.push_back(format_cell(v));
  }
  t.rows.push_back(row);
  return t;
}

inline std::string gnuplot_script(const ExperimentConfig& c, const Table& t, const std::string& csv_name) {
  // Infidelity columns when present, otherwise every numeric column.
  std::vector<std::size_t> series;
  for (std::size_t i = 1; i < t.columns.size(); ++i) {
    const std::string& col = t.columns[i];
    if (col.rfind("if_", 0) == 0 && col.find("stderr") == std::string::npos) series.push_back(i);
  }
  const bool infidelity = !series.empty();
  if (!infidelity) {
    for (std::size_t i = 1; i < t.columns.size(); ++i) series.push_back(i);
  }
  // gate_eval has a label in the first column.
  const bool labelled = c.experiment == ExperimentKind::gate_eval;
  std::ostringstream os;
  os << "set datafile separator ','\nset key autotitle columnhead\n";
  if (infidelity) os << "set logscale y\nset ylabel 'infidelity'\n";
  os << "set xlabel '" << t.columns.front() << "'\n";
  const bool over_nu = c.experiment == ExperimentKind::sweep_trap_fig1 || c.experiment == ExperimentKind::sweep_trap_fig2;
  if (over_nu) os << "set logscale x\n";
  os << "plot";
  for (std::size_t k = 0; k < series.size(); ++k) {
    os << (k == 0 ? " " : ", ") << "'" << csv_name << "' using "
       << (labelled ? "0:" + std::to_string(series[k] + 1) + ":xticlabels(1)" : "1:" + std::to_string(series[k] + 1))
       << " with linespoints";
  }
  os << "\n";
  return os.str();
}

}  // namespace detail

/// Evaluates the experiment without writing anything.
inline Table evaluate_experiment(const ExperimentConfig& c) {
  switch (c.experiment) {
    case ExperimentKind::sweep_trap_fig1: return detail::sdk_sweep(c, false, true);
    case ExperimentKind::sweep_trap_fig2: return detail::sdk_sweep(c, true, true);
    case ExperimentKind::sweep_sts_fig3a: return detail::sdk_sweep(c, false, false);
    case ExperimentKind::sweep_sts_fig3b: return detail::sdk_sweep(c, true, false);
    case ExperimentKind::composite_verify: return detail::composite_verify(c);
    case ExperimentKind::gate_eval: return detail::gate_eval(c);
    case ExperimentKind::calibrate: return detail::calibrate(c);
  }
  throw ConfigError("unknown experiment");
}

struct RunResult {
  std::filesystem::path csv;
  std::filesystem::path sidecar;
  Table table;
};

/// Runs the experiment and writes the CSV and `<csv>.json`. Nothing is
/// written unless every grid point succeeded.
inline RunResult run(const ExperimentConfig& c) {
  if (c.output_path.empty()) throw ConfigError("field 'output_path': missing (or pass --output)");
  RunResult r;
  r.table = evaluate_experiment(c);
  r.csv = c.output_path;
  r.sidecar = r.csv;
  r.sidecar += ".json";

  Json side;
  side["kickfocus_version"] = KICKFOCUS_VERSION;
  side["config"] = config_to_json(c);
  side["columns"] = r.table.columns;
  side["rows"] = r.table.rows.size();
  side["results"] = r.table.results;
  write_atomically(r.csv, to_csv(r.table));
  write_atomically(r.sidecar, side.dump(2) + "\n");
  if (c.plot_script) {
    std::filesystem::path gp = r.csv;
    gp.replace_extension(".gp");
    write_atomically(gp, detail::gnuplot_script(c, r.table, r.csv.filename().string()));
  }
  return r;
}

}  // namespace kickfocus
