#pragma once

#include <string>
#include <vector>

#include "wgd/common.hpp"
#include "wgd/engine.hpp"
#include "wgd/targets.hpp"

namespace wgd {

struct McmcConfig {
  long burn_in = 10000;
  long iters = 10000;
  Vector init;
  std::uint64_t seed = 0;
  /// Iteration after which the empirical covariance replaces the initial one.
  long adapt_start = 1000;
  double target_accept = 0.234;
  /// Proposal covariance before adaptation is init_scale^2 I.
  double init_scale = 0.1;

  void validate(Eigen::Index dim) const;
};

struct McmcResult {
  ParticleCloud draws;           ///< the `iters` post-burn-in states
  double acceptance = 0.0;       ///< acceptance rate over the kept draws
  double burn_in_acceptance = 0.0;
  double final_log_scale = 0.0;  ///< Robbins-Monro log multiplier at the end
};

/// Adaptive Metropolis: proposal N(0, lambda (2.38^2/d) (C_t + 1e-6 I)) with C_t
/// the running covariance of the chain, and log lambda adapted by
/// Robbins-Monro toward `target_accept` throughout the run.
McmcResult adaptive_rw_mcmc(const Target& target, const McmcConfig& config);

struct GvbState {
  Vector mean;
  Matrix cov_factor;  ///< lower triangular, positive diagonal

  Matrix covariance() const { return cov_factor * cov_factor.transpose(); }
  void validate() const;
};

struct GvbConfig {
  int steps = 5000;
  int mc_samples = 64;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  GvbState init;

  void validate(Eigen::Index dim) const;
};

struct ElboPoint {
  int step = 0;
  double elbo = 0.0;
};

struct GvbResult {
  GvbState state;
  std::vector<ElboPoint> elbo_trace;  ///< every 10 steps, plus the final state
  std::vector<std::string> warnings;
};

/// ELBO of q = N(m, L L^T) up to its constant: the Monte Carlo mean of
/// log pi(m + L z) over the given rows z, plus sum log L_ii.
double elbo_estimate(const Target& target, const GvbState& state, const RowMatrix& z);

/// Reparameterisation gradient of elbo_estimate for the same draws.
/// The factor gradient is lower triangular.
std::pair<Vector, Matrix> elbo_gradient(const Target& target, const GvbState& state, const RowMatrix& z);

/// Full-covariance Gaussian VB by stochastic gradient ascent on the ELBO.
/// Diagonal entries of the factor are clamped at 1e-6 (with a warning).
GvbResult gaussian_vb(const Target& target, const GvbConfig& config);

/// n iid draws from the fitted Gaussian.
ParticleCloud sample_gvb(const GvbState& state, Eigen::Index n, std::uint64_t seed);

}  // namespace wgd
