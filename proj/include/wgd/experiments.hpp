#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wgd/baselines.hpp"
#include "wgd/config.hpp"
#include "wgd/engine.hpp"
#include "wgd/oracle.hpp"
#include "wgd/targets.hpp"

namespace wgd {

using Metrics = std::vector<std::pair<std::string, double>>;

struct CommandOptions {
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = true;
};

/// Applies command-line overrides to a loaded config.
void apply_overrides(ExperimentConfig& config, const CommandOptions& options);

/// The target named by the config (synthesises or loads regression data).
TargetPtr build_target(const ExperimentConfig& config);

/// mu0 = N(mean, scale^2 I); the mean defaults to 0, or the posterior mode
/// for regression targets.
GaussianState initial_measure(const ExperimentConfig& config, const Target& target);

/// The run configuration with mu0 and the seed filled in.
RunConfig resolve_run(const ExperimentConfig& config, const GaussianState& mu0);

/// Number of WGD updates that were applied during a run.
long steps_applied(const RunTrace& trace);

/// Writes manifest.json: version, command, timestamp and resolved config.
void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& config,
                    const std::string& command);

struct RunOutcome {
  std::filesystem::path out_dir;
  RunResult result;
  Metrics metrics;
};

/// Runs one WGD experiment and writes particles.csv, trace.csv,
/// diagnostics.csv and manifest.json (plus kind-specific tables).
RunOutcome cmd_run(ExperimentConfig config, const CommandOptions& options = {});

struct CheckLine {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct TheoryOutcome {
  std::filesystem::path out_dir;
  std::vector<CheckLine> checks;
  bool all_passed() const;
};

/// Oracle checks of the descent, contraction, convergence and noise bounds;
/// writes theory_report.txt, summary.csv and the sweep tables.
TheoryOutcome cmd_theory_check(ExperimentConfig config, const CommandOptions& options = {});

struct MethodOutput {
  std::string method;
  RowMatrix draws;
  double sliced_w2 = std::numeric_limits<double>::quiet_NaN();  ///< to reference samples
};

struct CompareOutcome {
  std::filesystem::path out_dir;
  std::vector<MethodOutput> methods;
  Metrics metrics;
};

/// Runs WGD, MCMC and/or GVB on one target and writes per-method KDE
/// tables, draws and comparison summaries. Needs at least two methods.
CompareOutcome cmd_compare(ExperimentConfig config, const CommandOptions& options = {});

}  // namespace wgd
