#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wgd/common.hpp"
#include "wgd/score_model.hpp"
#include "wgd/targets.hpp"

namespace wgd {

/// N x d particle positions representing the current measure.
struct ParticleCloud {
  RowMatrix positions;

  Eigen::Index size() const { return positions.rows(); }
  Eigen::Index dim() const { return positions.cols(); }
  /// Throws unless N >= 1 and every coordinate is finite.
  void validate() const;
};

/// eta_t = eps0 / (1 + t)^alpha with 1/2 < alpha <= 1.
struct StepSchedule {
  double eps0 = 0.01;
  double alpha = 0.6;

  void validate() const;
};

double step_size(const StepSchedule& schedule, long t);

/// a_t = min(1, t / horizon).
struct AnnealSchedule {
  int horizon = 1;

  void validate() const;
  double level(long t) const;
};

struct StopRule {
  int patience = 20;
  int max_iters = 1000;
  double rel_improvement = 1e-6;

  void validate() const;
};

/// Tracks the running minimum of Err_t and signals a stop once `patience`
/// consecutive observations fail to improve it by the relative threshold.
class StopMonitor {
 public:
  explicit StopMonitor(const StopRule& rule);

  /// Returns true when this observation is the patience-th non-improving one.
  bool observe(double err);
  double best() const { return best_; }
  int stale() const { return stale_; }

 private:
  StopRule rule_;
  double best_;
  int stale_ = 0;
  bool seen_ = false;
};

enum class ScoreMode {
  learned,       ///< tanh-block score matching
  gaussian_fit,  ///< score of the Gaussian with the cloud's empirical moments
};

struct ScoreOptions {
  ScoreMode mode = ScoreMode::learned;
  TrainConfig train;
  int blocks = 2;
  /// SGD steps for the first fit from a fresh model.
  int initial_steps = 1000;
  /// Refit every `refresh_stride` iterations.
  int refresh_stride = 1;
  /// Fit in per-coordinate standardised coordinates of the current cloud.
  bool standardize = true;

  void validate() const;
};

struct TraceRecord {
  long t = 0;
  double eta = 0.0;
  double anneal = 1.0;
  double err = 0.0;
  double sm_loss = 0.0;
  double kl = std::numeric_limits<double>::quiet_NaN();  ///< Gaussian-fit KL to a Gaussian target
  double w2 = std::numeric_limits<double>::quiet_NaN();  ///< Gaussian-fit W2 to a Gaussian target
  double elapsed_ms = 0.0;
};

struct RunTrace {
  std::vector<TraceRecord> records;
  std::string stop_reason;
};

struct RunConfig {
  StepSchedule step;
  std::optional<AnnealSchedule> anneal;
  StopRule stop;
  ScoreOptions score;
  /// Initial measure; its analytic score drives the annealed targets.
  GaussianState mu0;
  std::uint64_t seed = 0;
  double divergence_bound = 1e6;
  std::function<void(const TraceRecord&)> on_iteration;

  void validate(Eigen::Index dim) const;
};

struct RunResult {
  ParticleCloud cloud;
  RunTrace trace;
  std::optional<StandardizedScore> score;
};

/// iid draws from mu0.
ParticleCloud initial_cloud(const GaussianState& mu0, Eigen::Index n, std::uint64_t seed);

/// x_i <- x_i - eta (s(x_i) - grad log pi(x_i)) for every particle.
ParticleCloud wgd_step(const ParticleCloud& cloud, const VectorField& score,
                       const VectorField& target_score, double eta);

/// (1 - a) grad log mu0(x) + a grad log pi(x).
void annealed_score(const VectorField& target_score, const VectorField& mu0_score, double a,
                    ConstPoint x, Point out);

/// (1/N) sum_i |s(x_i) - grad log pi(x_i)|^2.
double err_norm(const ParticleCloud& cloud, const VectorField& score, const VectorField& target_score);

/// Analytic score field of a Gaussian law.
VectorField gaussian_score_field(const GaussianState& state);

/// Standard or annealed particle WGD with the patience stopping rule. The
/// stopping rule only engages once annealing has reached a_t = 1.
RunResult run_wgd(const ParticleCloud& init, const Target& target, const RunConfig& config);

}  // namespace wgd
