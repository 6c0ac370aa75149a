#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "psp/harness.hpp"

namespace psp {

/// Raised on any invalid configuration; message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Resolved configuration: market generation, engine parameters and the
/// experiment section (seed arithmetic, sweep levels).
struct AppConfig {
  ExperimentSpec market;
  EngineConfig engine;
  std::string preset = "random";  // "random" | "ladder"
  std::vector<double> levels;     // sweep connectivity levels, percent
  int seeds_per_level = 20;
  int jobs = 1;
};

/// Defaults mirroring the reference experimental setup (epsilon 2.5,
/// capacities [60, 40], base seed 20405008, 0..100% in steps of 10).
AppConfig default_config();

/// Parses and validates a JSON config file. Throws ConfigError with the
/// field path on any problem; never touches the filesystem otherwise.
AppConfig load_config(const std::filesystem::path& path);

/// Applies one `section.key=value` override; throws ConfigError on unknown
/// keys or unparsable values.
void apply_override(AppConfig& config, const std::string& assignment);

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitStepLimit = 2;

/// Runs one seeded simulation and writes report.json, states.csv and
/// manifest.json under out_dir. Returns 0 on convergence, 2 on a step-limit
/// halt.
int cmd_run(const AppConfig& config, std::uint64_t seed,
            const std::filesystem::path& out_dir);

/// Evaluates the built-in ladder market (or one loaded from a JSON file)
/// and prints tuples, margins and the violation count. Returns 0 iff no
/// tuple is violated.
int cmd_ladder_check(const std::optional<std::filesystem::path>& market_file,
                     std::ostream& out);

/// Runs the connectivity sweep and writes sweep.csv, report.json and
/// manifest.json under out_dir. Runs are distributed over `jobs` threads.
int cmd_sweep(const AppConfig& config, const std::filesystem::path& out_dir);

/// Prints the two-round scenario: tau-step table plus the shift-event log.
/// Returns 0 iff the round-1 payment pattern matches the expected trace.
int cmd_shift_demo(double epsilon, double delta, std::ostream& out);

/// Default output directory: $PSP_OUT_DIR if set, else "./out".
std::filesystem::path default_out_dir();

/// Full argv entry point used by the psp-sim binary.
int cli_main(int argc, char** argv);

}  // namespace psp
