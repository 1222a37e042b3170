// kickfocus run <config> [--seed N] [--workers N] [--output FILE]
//
// Exit status: 0 success, 2 config error, 3 numerical failure, 1 otherwise.

#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

#include "kickfocus/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Spin-dependent kick simulations: trap, noise and gate sweeps"};
  app.set_version_flag("--version", KICKFOCUS_VERSION);
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> output;
  bool quiet = false;

  CLI::App* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config_path, "JSON config file")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--workers", workers, "Worker threads for grid points")->check(CLI::PositiveNumber);
  run->add_option("--output", output, "Override the output CSV path");
  run->add_flag("-q,--quiet", quiet, "Do not print a summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    kickfocus::ExperimentConfig cfg = kickfocus::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    if (output) cfg.output_path = *output;

    const auto start = std::chrono::steady_clock::now();
    const auto result = kickfocus::run(cfg);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!quiet) {
      std::cout << kickfocus::to_string(cfg.experiment) << ": " << result.table.rows.size() << " rows -> "
                << result.csv.string() << " (" << kickfocus::format_number(seconds) << " s)\n";
    }
    return 0;
  } catch (const kickfocus::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const kickfocus::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    // Library preconditions reached through config values.
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
