#include "wgd/engine.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "wgd/linalg.hpp"
#include "wgd/oracle.hpp"
#include "wgd/random.hpp"

namespace wgd {

void ParticleCloud::validate() const {
  if (positions.rows() < 1 || positions.cols() < 1)
    throw std::invalid_argument("particle cloud must have N >= 1 rows and d >= 1 columns");
  if (!positions.allFinite()) throw NumericalError("particle cloud has non-finite coordinates");
}

void StepSchedule::validate() const {
  if (!(eps0 > 0.0)) throw std::invalid_argument("step schedule: eps0 must be > 0");
  if (!(alpha > 0.5 && alpha <= 1.0))
    throw std::invalid_argument("step schedule: alpha must lie in (1/2, 1]");
}

double step_size(const StepSchedule& schedule, long t) {
  if (t < 0) throw std::invalid_argument("step_size: t must be >= 0");
  return schedule.eps0 / std::pow(1.0 + static_cast<double>(t), schedule.alpha);
}

void AnnealSchedule::validate() const {
  if (horizon < 1) throw std::invalid_argument("anneal schedule: horizon must be >= 1");
}

double AnnealSchedule::level(long t) const {
  if (t >= horizon) return 1.0;
  return static_cast<double>(t) / static_cast<double>(horizon);
}

void StopRule::validate() const {
  if (patience < 1) throw std::invalid_argument("stop rule: patience must be >= 1");
  if (max_iters < 1) throw std::invalid_argument("stop rule: max_iters must be >= 1");
  if (!(rel_improvement >= 0.0)) throw std::invalid_argument("stop rule: rel_improvement must be >= 0");
}

StopMonitor::StopMonitor(const StopRule& rule) : rule_(rule), best_(0.0) { rule_.validate(); }

bool StopMonitor::observe(double err) {
  if (!seen_ || err < best_ * (1.0 - rule_.rel_improvement)) {
    best_ = err;
    seen_ = true;
    stale_ = 0;
    return false;
  }
  ++stale_;
  return stale_ >= rule_.patience;
}

void ScoreOptions::validate() const {
  if (mode == ScoreMode::learned) {
    if (blocks < 1) throw std::invalid_argument("score: blocks must be >= 1");
    if (initial_steps < 0) throw std::invalid_argument("score: initial_steps must be >= 0");
    train.validate();
  }
  if (refresh_stride < 1) throw std::invalid_argument("score: refresh_stride must be >= 1");
}

void RunConfig::validate(Eigen::Index dim) const {
  step.validate();
  if (anneal) anneal->validate();
  stop.validate();
  score.validate();
  mu0.validate();
  if (mu0.dim() != dim) throw std::invalid_argument("run: mu0 dimension does not match the target");
  if (!(divergence_bound > 0.0)) throw std::invalid_argument("run: divergence_bound must be > 0");
}

ParticleCloud initial_cloud(const GaussianState& mu0, Eigen::Index n, std::uint64_t seed) {
  mu0.validate();
  if (n < 1) throw std::invalid_argument("initial_cloud: need at least one particle");
  Philox rng(seed, 0x696e6974ull);
  const Matrix chol = mu0.covariance.llt().matrixL();
  return {gaussian_rows(rng, n, mu0.mean, chol)};
}

ParticleCloud wgd_step(const ParticleCloud& cloud, const VectorField& score,
                       const VectorField& target_score, double eta) {
  if (!(eta >= 0.0)) throw std::invalid_argument("wgd_step: eta must be >= 0");
  ParticleCloud next = cloud;
  const Eigen::Index n = cloud.size(), d = cloud.dim();
  std::vector<char> bad(n, 0);
#pragma omp parallel
  {
    Vector s(d), g(d);
#pragma omp for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
      const ConstPoint x = row_span(cloud.positions, i);
      score(x, Point(s.data(), d));
      target_score(x, Point(g.data(), d));
      auto row = next.positions.row(i);
      row -= eta * (s - g).transpose();
      if (!row.allFinite()) bad[i] = 1;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!bad[i]) continue;
    std::ostringstream msg;
    msg << "wgd_step: non-finite update for particle " << i << " at x=("
        << cloud.positions.row(i) << ") -> (" << next.positions.row(i) << ")";
    throw NumericalError(msg.str());
  }
  return next;
}

void annealed_score(const VectorField& target_score, const VectorField& mu0_score, double a,
                    ConstPoint x, Point out) {
  if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("annealed_score: a must lie in [0, 1]");
  if (a == 1.0) {
    target_score(x, out);
    return;
  }
  Vector tmp(x.size());
  mu0_score(x, Point(tmp.data(), tmp.size()));
  if (a == 0.0) {
    as_vector(out) = tmp;
    return;
  }
  target_score(x, out);
  as_vector(out) = (1.0 - a) * tmp + a * as_vector(out);
}

double err_norm(const ParticleCloud& cloud, const VectorField& score, const VectorField& target_score) {
  const Eigen::Index n = cloud.size(), d = cloud.dim();
  if (n < 1) throw std::invalid_argument("err_norm: empty cloud");
  std::vector<double> per(n);
#pragma omp parallel
  {
    Vector s(d), g(d);
#pragma omp for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
      const ConstPoint x = row_span(cloud.positions, i);
      score(x, Point(s.data(), d));
      target_score(x, Point(g.data(), d));
      per[i] = (s - g).squaredNorm();
    }
  }
  double total = 0.0;
  for (double v : per) total += v;
  return total / static_cast<double>(n);
}

VectorField gaussian_score_field(const GaussianState& state) {
  state.validate();
  Matrix prec = state.covariance.llt().solve(Matrix::Identity(state.dim(), state.dim()));
  prec = 0.5 * (prec + prec.transpose());
  return [prec, mean = state.mean](ConstPoint x, Point out) {
    as_vector(out).noalias() = -prec * (as_vector(x) - mean);
  };
}

namespace {

/// The current estimate of grad log mu_t and its fitting loss.
class ScoreTracker {
 public:
  ScoreTracker(const ScoreOptions& options, std::uint64_t seed) : options_(options), seed_(seed) {}

  void refresh(const ParticleCloud& cloud, long t) {
    if (options_.mode == ScoreMode::gaussian_fit) {
      const GaussianState fit = oracle::fit_gaussian(cloud.positions);
      Eigen::LLT<Matrix> llt(fit.covariance);
      if (llt.info() != Eigen::Success)
        throw NumericalError("cloud covariance is singular; cannot form the Gaussian score");
      field_ = gaussian_score_field(fit);
      loss_ = -0.5 * llt.solve(Matrix::Identity(fit.dim(), fit.dim())).trace();
      return;
    }
    if (standardized_ && t % options_.refresh_stride != 0) return;

    auto [shift, scale] = options_.standardize
                              ? StandardizedScore::cloud_moments(cloud.positions)
                              : std::pair<Vector, Vector>{Vector::Zero(cloud.dim()), Vector::Ones(cloud.dim())};
    StandardizedScore next{ScoreModel{}, shift, scale};
    const RowMatrix z = next.standardize(cloud.positions);

    TrainConfig train = options_.train;
    train.seed = derive_seed(seed_, static_cast<std::uint64_t>(t), 0x736dull);
    std::optional<ScoreModel> init;
    if (standardized_) {
      init = standardized_->model;
    } else {
      init = ScoreModel::random(cloud.dim(), options_.blocks, derive_seed(seed_, 0, 0x696e6974ull));
      train.steps += options_.initial_steps;
    }
    FitResult fit = fit_score(z, init, train, options_.blocks);
    next.model = std::move(fit.model);
    loss_ = fit.losses.empty() ? sm_loss(next.model, z) : fit.losses.back();
    standardized_ = std::move(next);
    field_ = [model = &*standardized_](ConstPoint x, Point out) { model->eval(x, out); };
  }

  const VectorField& field() const { return field_; }
  double loss() const { return loss_; }
  const std::optional<StandardizedScore>& model() const { return standardized_; }

 private:
  ScoreOptions options_;
  std::uint64_t seed_;
  std::optional<StandardizedScore> standardized_;
  VectorField field_;
  double loss_ = 0.0;
};

}  // namespace

RunResult run_wgd(const ParticleCloud& init, const Target& target, const RunConfig& config) {
  init.validate();
  if (init.dim() != target.dim()) throw std::invalid_argument("run: cloud dimension does not match the target");
  config.validate(target.dim());

  const VectorField target_field = target.score_field();
  const VectorField mu0_field = gaussian_score_field(config.mu0);
  const std::optional<GaussianState> gaussian_pi = target.gaussian();

  RunResult result;
  result.cloud = init;
  ScoreTracker tracker(config.score, config.seed);
  StopMonitor monitor(config.stop);
  const auto start = std::chrono::steady_clock::now();

  for (long t = 0;; ++t) {
    if (t >= config.stop.max_iters) {
      result.trace.stop_reason = "max_iters";
      break;
    }
    try {
      tracker.refresh(result.cloud, t);
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(t) + ": score fit failed: " + e.what());
    }

    const double a = config.anneal ? config.anneal->level(t) : 1.0;
    VectorField goal = target_field;
    if (a < 1.0) {
      goal = [&target_field, &mu0_field, a](ConstPoint x, Point out) {
        annealed_score(target_field, mu0_field, a, x, out);
      };
    }

    TraceRecord rec;
    rec.t = t;
    rec.eta = step_size(config.step, t);
    rec.anneal = a;
    rec.err = err_norm(result.cloud, tracker.field(), goal);
    rec.sm_loss = tracker.loss();
    if (gaussian_pi) {
      const GaussianState fit = oracle::fit_gaussian(result.cloud.positions);
      if (fit.covariance.llt().info() == Eigen::Success) {
        rec.kl = oracle::kl_gaussian(fit, *gaussian_pi);
        rec.w2 = oracle::w2_gaussian(fit, *gaussian_pi);
      }
    }
    rec.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.trace.records.push_back(rec);
    if (config.on_iteration) config.on_iteration(rec);

    if (a >= 1.0 && monitor.observe(rec.err)) {
      result.trace.stop_reason = "patience";
      break;
    }

    try {
      result.cloud = wgd_step(result.cloud, tracker.field(), goal, rec.eta);
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(t) + ": " + e.what());
    }
    const double worst = result.cloud.positions.cwiseAbs().maxCoeff();
    if (worst > config.divergence_bound) {
      std::ostringstream msg;
      msg << "iteration " << t << ": particle coordinate reached " << worst
          << ", beyond the divergence bound " << config.divergence_bound;
      throw DivergenceError(msg.str());
    }
  }
  result.score = tracker.model();
  return result;
}

}  // namespace wgd
