#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "wgd/config.hpp"
#include "wgd/experiments.hpp"

namespace {

// One line, key=value fields, so scripts can parse failures.
int fail(const std::string& kind, const std::string& message, const std::string& key = "") {
  std::cerr << "error kind=" << kind;
  if (!key.empty()) std::cerr << " key=" << key;
  std::cerr << " message=\"" << message << "\"\n";
  return kind == "config" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle Wasserstein gradient descent sampler"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(WGD_VERSION));

  std::string out_dir;
  std::uint64_t seed = 0;
  bool quiet = false;
  app.add_option("--out", out_dir, "Output directory (overrides the config)");
  auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides the config)");
  app.add_flag("--quiet", quiet, "No progress output");

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run one WGD experiment");
  auto* theory = app.add_subcommand("theory-check", "Closed-form checks of the convergence bounds");
  auto* compare = app.add_subcommand("compare", "Run several samplers on one target");
  for (auto* sub : {run, theory, compare}) sub->add_option("config", config_path, "Config file")->required();

  CLI11_PARSE(app, argc, argv);

  wgd::CommandOptions options;
  if (!out_dir.empty()) options.out_dir = out_dir;
  if (seed_opt->count() > 0) options.seed = seed;
  options.quiet = quiet;

  try {
    const wgd::ExperimentConfig config = wgd::load_experiment_config(config_path);
    if (run->parsed()) {
      const auto outcome = wgd::cmd_run(config, options);
      if (!quiet) {
        for (const auto& [k, v] : outcome.metrics) std::cout << k << '=' << v << '\n';
        std::cout << "wrote " << outcome.out_dir.string() << '\n';
      }
      return 0;
    }
    if (theory->parsed()) {
      const auto outcome = wgd::cmd_theory_check(config, options);
      for (const auto& c : outcome.checks)
        if (!quiet || !c.passed) std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
      return outcome.all_passed() ? 0 : 3;
    }
    const auto outcome = wgd::cmd_compare(config, options);
    if (!quiet) {
      for (const auto& [k, v] : outcome.metrics) std::cout << k << '=' << v << '\n';
      std::cout << "wrote " << outcome.out_dir.string() << '\n';
    }
    return 0;
  } catch (const wgd::ConfigError& e) {
    return fail("config", e.what(), e.key());
  } catch (const wgd::StepTooLargeError& e) {
    return fail("step-too-large", e.what());
  } catch (const wgd::DivergenceError& e) {
    return fail("divergence", e.what());
  } catch (const wgd::NumericalError& e) {
    return fail("numerical", e.what());
  } catch (const std::invalid_argument& e) {
    return fail("invalid-input", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
}
