#pragma once

// Shot-to-shot amplitude noise: one fractional error per shot, applied to
// every pulse derived from that shot.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace kickfocus {

enum class NoiseKind { deterministic_sweep, gaussian_mc, uniform_mc };

struct NoiseModel {
  NoiseKind kind = NoiseKind::deterministic_sweep;
  double magnitude = 0.0;
  int n_samples = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!std::isfinite(magnitude) || magnitude < 0.0) {
      throw std::invalid_argument("NoiseModel: magnitude must be finite and >= 0");
    }
    if (kind != NoiseKind::deterministic_sweep && n_samples < 1) {
      throw std::invalid_argument("NoiseModel: n_samples must be >= 1");
    }
  }
};

inline std::vector<double> sample_shots(const NoiseModel& model) {
  model.validate();
  if (model.kind == NoiseKind::deterministic_sweep) return {model.magnitude};

  // Distributions are implemented here rather than with <random>'s
  // distribution classes, whose output is not specified across standard
  // libraries; the engine itself is fully specified.
  std::mt19937_64 engine(model.seed);
  auto uniform01 = [&] {
    return static_cast<double>(engine() >> 11) * 0x1.0p-53;  // [0, 1)
  };
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(model.n_samples));
  if (model.kind == NoiseKind::uniform_mc) {
    for (int i = 0; i < model.n_samples; ++i) out.push_back(model.magnitude * (2.0 * uniform01() - 1.0));
    return out;
  }
  // Box-Muller, both variates used.
  while (static_cast<int>(out.size()) < model.n_samples) {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    out.push_back(model.magnitude * r * std::cos(2.0 * std::numbers::pi * u2));
    if (static_cast<int>(out.size()) < model.n_samples) {
      out.push_back(model.magnitude * r * std::sin(2.0 * std::numbers::pi * u2));
    }
  }
  return out;
}

inline const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::deterministic_sweep: return "deterministic_sweep";
    case NoiseKind::gaussian_mc: return "gaussian_mc";
    case NoiseKind::uniform_mc: return "uniform_mc";
  }
  return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "deterministic_sweep") return NoiseKind::deterministic_sweep;
  if (s == "gaussian_mc") return NoiseKind::gaussian_mc;
  if (s == "uniform_mc") return NoiseKind::uniform_mc;
  throw std::invalid_argument("unknown noise kind '" + s + "'");
}

}  // namespace kickfocus
