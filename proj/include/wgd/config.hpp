#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wgd/baselines.hpp"
#include "wgd/common.hpp"
#include "wgd/engine.hpp"

namespace wgd {

enum class ExperimentKind { gaussian_oracle, banana, eggbox, logistic_regression, theory_check };

ExperimentKind parse_experiment_kind(const std::string& name);
std::string to_string(ExperimentKind kind);

struct TargetSettings {
  Eigen::Index dim = 2;
  // gaussian-oracle
  Vector mean;
  Matrix covariance;
  // banana
  double b = 0.01;
  // eggbox
  double spread = 5.0;
  double correlation = 0.5;
  // logistic-regression
  std::string data_path;  ///< empty: synthetic data
  bool standardize = true;
  double sigma0_sq = 100.0;
  long synth_n = 2000;
  Vector true_theta;
  std::uint64_t data_seed = 0;
};

struct InitSettings {
  long particles = 1000;
  std::optional<Vector> mean;  ///< default: 0, or the posterior mode for regression
  double scale = 1.0;          ///< mu0 = N(mean, scale^2 I)
  int mode_iters = 100;        ///< gradient-ascent steps for the regression mode
};

struct TheorySettings {
  GaussianState mu;
  GaussianState pi;
  long steps = 5000;
  long prefix = 100;
  double sweep_lo = 1e-4, sweep_hi = 1e-2;
  int sweep_n = 21;
  int contraction_pairs = 100;
  long noise_steps = 2000;
  int noise_reps = 100;
  double noise_magnitude = 0.1;
  double noise_eps0 = 0.01;  // step scale for the noise sweep; alpha is shared
  std::vector<double> magnitudes;
};

struct CompareSettings {
  std::vector<std::string> methods;
  long reference_samples = 10000;
  int projections = 128;
};

/// Fully resolved experiment description. Every key read (including
/// defaults) is recorded in `resolved` for the run manifest.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::gaussian_oracle;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  bool timing = false;
  TargetSettings target;
  InitSettings init;
  RunConfig run;  ///< mu0 is filled in once the target is built
  McmcConfig mcmc;
  GvbConfig gvb;
  double gvb_init_scale = 1.0;
  CompareSettings compare;
  TheorySettings theory;
  std::map<std::string, std::map<std::string, std::string>> resolved;
};

/// Reads the INI-style format: [section] headers, key = value lines, '#' or
/// ';' comments. Unknown sections or keys and out-of-range values raise
/// ConfigError naming the key as section.key.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(std::istream& in, const std::string& source = "<config>");

/// "1, 2.5, -3" -> vector.
Vector parse_vector(const std::string& text);
/// A single number s gives s I; otherwise rows separated by ';'.
Matrix parse_matrix(const std::string& text, Eigen::Index dim);

}  // namespace wgd
