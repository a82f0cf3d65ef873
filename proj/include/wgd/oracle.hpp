#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wgd/common.hpp"
#include "wgd/engine.hpp"
#include "wgd/targets.hpp"

/// Closed-form Gaussian machinery for exact-gradient WGD.
///
/// For Gaussian mu and pi the Wasserstein gradient of F = KL(mu || pi) is the
/// affine field g(x) = (P_pi - P_mu) x + (P_mu m_mu - P_pi m_pi), with P the
/// precision matrices, so one WGD step maps Gaussians to Gaussians and every
/// quantity below is exact.
namespace wgd::oracle {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// One exact WGD step. Throws StepTooLargeError when I - eta (P_pi - P_mu)
/// is not positive definite.
GaussianState oracle_step(const GaussianState& mu, const GaussianState& pi, double eta);

double kl_gaussian(const GaussianState& mu, const GaussianState& pi);

struct W2Result {
  double value = 0.0;
  double condition = 1.0;  ///< condition number of the inner product matrix
};
W2Result w2_gaussian_detailed(const GaussianState& mu, const GaussianState& pi);
double w2_gaussian(const GaussianState& mu, const GaussianState& pi);

/// |grad_mu F|^2 integrated against mu.
double grad_norm_sq(const GaussianState& mu, const GaussianState& pi);

/// Empirical Gaussian fit of a particle cloud (population covariance).
GaussianState fit_gaussian(const RowMatrix& cloud);

/// Lipschitz surrogate: the larger of sup |grad V| and sup |grad log mu| over
/// the union of the radius-sigma ellipsoids of mu and pi.
double lipschitz_surrogate(const GaussianState& mu, const GaussianState& pi, double radius = 6.0);

struct DescentRow {
  double eta, delta_f, grad_sq, remainder, c_needed;
};

struct DescentReport {
  std::vector<DescentRow> rows;
  double beta = 0.0;
  bool descent_ok = true;          ///< F decreased at every eta with |grad|^2 > threshold
  double descent_threshold = 0.0;  ///< largest eta below which descent holds throughout
  double c_hat = 0.0;              ///< minimal constant making the inequality hold on the sweep
  double remainder_ratio = 1.0;    ///< max |remainder| / min |remainder|
  bool remainder_bounded = true;

  KeyValues key_values() const;
};

/// Descent inequality F(nu) - F(mu) <= -eta (1 - 1.5 beta eta) |grad F|^2 + C eta^2
/// over a sweep of step sizes.
DescentReport check_descent(const GaussianState& mu, const GaussianState& pi,
                        const std::vector<double>& etas, double beta, double grad_floor = 1e-8);

/// n log-spaced values between lo and hi inclusive.
std::vector<double> log_space(double lo, double hi, int n);

struct ContractionReport {
  double eta = 0.0, lipschitz = 0.0;
  double w2_sq_before = 0.0, w2_sq_after = 0.0, f_mu = 0.0, rhs = 0.0, grad_sq = 0.0;
  bool holds = false;
  bool contraction_regime = false;  ///< eta < 2 F(mu) / L^2

  KeyValues key_values() const;
};

/// W2^2(nu, pi) <= W2^2(mu, pi) - 2 eta F(mu) + eta^2 L^2.
ContractionReport check_w2_contraction(const GaussianState& mu, const GaussianState& pi, double eta,
                                    double lipschitz);

struct ConvergenceReport {
  long steps = 0;
  double alpha = 0.0, beta = 0.0;
  double f0 = 0.0, f_final = 0.0, ratio = 0.0;
  long monotone_from = 5;
  bool monotone = true;
  bool talagrand_ok = true;
  double worst_talagrand_slack = 0.0;  ///< min over iterates of (2/alpha) F - W2^2
  long prefix = 0;
  double c_hat = 0.0;           ///< minimal C over the prefix
  long bound_violations = 0;    ///< iterates past the prefix violating the bound with c_hat
  long w_bound_violations = 0;  ///< same for the W2 form of the bound
  std::vector<double> kl;       ///< F(mu_k), k = 0..steps
  std::vector<double> w2_sq;    ///< W2^2(mu_k, pi)

  KeyValues key_values() const;
};

/// Runs the exact recursion for `steps` iterations with eta_k from `schedule`.
/// alpha/beta are the regularity constants of pi. Throws ConfigError when the
/// bound's denominator becomes nonpositive.
ConvergenceReport check_kl_convergence(const GaussianState& mu0, const GaussianState& pi,
                                    const StepSchedule& schedule, long steps, double alpha,
                                    double beta, long prefix = 100);

enum class PerturbationKind { none, bounded_bias, zero_mean_noise };

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::none;
  double magnitude = 0.0;
  double lipschitz_cap = 0.0;
  std::uint64_t seed = 0;
  /// Bias direction; a seeded random unit vector when absent.
  std::optional<Vector> direction;

  void validate(Eigen::Index dim) const;
};

PerturbationKind parse_perturbation_kind(const std::string& name);
std::string to_string(PerturbationKind kind);

struct PerturbedStep {
  GaussianState state;
  Vector xi;                ///< the (spatially constant) error field
  double xi_norm_sq = 0.0;  ///< |xi|^2_mu
  double delta = 0.0;       ///< <g, g + xi>_mu / |g|_mu
  bool direction_ok = true;  ///< delta > 0 (or g = 0)
};

/// WGD step with gradient g + xi. Both error kinds are constant fields, so
/// the image of a Gaussian stays Gaussian. `step_index` selects the noise draw.
PerturbedStep perturbed_oracle_step(const GaussianState& mu, const GaussianState& pi, double eta,
                                    const PerturbationSpec& spec, long step_index = 0);

/// Particle version: the score of the cloud is taken from its Gaussian fit.
ParticleCloud perturbed_particle_step(const ParticleCloud& cloud, const GaussianState& pi,
                                      double eta, const PerturbationSpec& spec, long step_index = 0);

struct NoiseBoundReport {
  long steps = 0;
  int repetitions = 0;
  double magnitude = 0.0;
  double lipschitz = 0.0;
  double sum_eta = 0.0, sum_eta_sq = 0.0;
  double w2_sq_initial = 0.0;
  double mean_f_avg = 0.0;  ///< seed average of the convexity bound sum_k w_k F(mu_k) >= F(mu_bar)
  double bound = 0.0;
  bool holds = false;
  double min_delta = 0.0;  ///< smallest direction constant seen along all runs

  KeyValues key_values() const;
};

/// Averaged-iterate bound E F(mu_bar_T) <= [W2^2(mu0, pi) + 2 (L^2 + c^2) sum eta^2] / (2 sum eta).
/// F(mu_bar_T) of the mixture is bounded above by the eta-weighted average of
/// F(mu_k) (convexity of KL), which is what gets compared.
NoiseBoundReport check_noise_bound(const GaussianState& mu0, const GaussianState& pi,
                              const StepSchedule& schedule, long steps, const PerturbationSpec& spec,
                              int repetitions);

/// Random SPD Gaussian: mean ~ N(0, mean_scale^2 I), covariance Q diag(e^u) Q^T
/// with Q a random rotation and u ~ U(-log_spread, log_spread).
GaussianState random_gaussian_state(Eigen::Index dim, std::uint64_t seed, double mean_scale = 2.0,
                                    double log_spread = 1.0);

/// Writes key=value lines.
std::string format_key_values(const KeyValues& kv);

}  // namespace wgd::oracle
