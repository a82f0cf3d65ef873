#include "wgd/baselines.hpp"

#include <cmath>
#include <sstream>

#include "wgd/random.hpp"

namespace wgd {

void McmcConfig::validate(Eigen::Index dim) const {
  if (iters < 1) throw std::invalid_argument("mcmc: iters must be >= 1");
  if (burn_in < 0) throw std::invalid_argument("mcmc: burn_in must be >= 0");
  if (adapt_start < 1) throw std::invalid_argument("mcmc: adapt_start must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw std::invalid_argument("mcmc: target_accept must lie in (0, 1)");
  if (!(init_scale > 0.0)) throw std::invalid_argument("mcmc: init_scale must be > 0");
  if (init.size() != dim) throw std::invalid_argument("mcmc: init has the wrong dimension");
}

McmcResult adaptive_rw_mcmc(const Target& target, const McmcConfig& config) {
  const Eigen::Index d = target.dim();
  config.validate(d);
  Vector x = config.init;
  double logp = target.log_density(ConstPoint(x.data(), d));
  if (!std::isfinite(logp)) throw std::invalid_argument("mcmc: log density is not finite at the initial state");

  Philox rng(config.seed, 0x6d636d63ull);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double base = 2.38 * 2.38 / static_cast<double>(d);
  const Matrix jitter = 1e-6 * Matrix::Identity(d, d);
  const Matrix initial = (config.init_scale * config.init_scale / base) * Matrix::Identity(d, d);

  // Running moments (Welford) over every state visited so far.
  Vector mean = x;
  Matrix scatter = Matrix::Zero(d, d);
  long count = 1;

  double log_lambda = 0.0;
  Matrix chol = initial.llt().matrixL();
  const long total = config.burn_in + config.iters;
  McmcResult out;
  out.draws.positions.resize(config.iters, d);
  long accepted_burn = 0, accepted_keep = 0;
  Vector proposal(d);

  for (long it = 0; it < total; ++it) {
    if (it >= config.adapt_start && (it - config.adapt_start) % 10 == 0) {
      Eigen::LLT<Matrix> llt(scatter / static_cast<double>(count) + jitter);
      if (llt.info() == Eigen::Success) chol = llt.matrixL();
    }
    const double scale = std::sqrt(base * std::exp(log_lambda));
    proposal = x + scale * (chol * standard_normal_vector(rng, d));
    const double logq = target.log_density(ConstPoint(proposal.data(), d));
    const double log_ratio = logq - logp;
    const double accept_prob = std::isfinite(logq) ? std::min(1.0, std::exp(std::min(0.0, log_ratio))) : 0.0;
    const bool accept = unif(rng) < accept_prob;
    if (accept) {
      x = proposal;
      logp = logq;
      if (it < config.burn_in) ++accepted_burn;
      else ++accepted_keep;
    }
    log_lambda += (accept_prob - config.target_accept) / std::pow(static_cast<double>(it) + 1.0, 0.6);

    ++count;
    const Vector delta = x - mean;
    mean += delta / static_cast<double>(count);
    scatter += delta * (x - mean).transpose();

    if (it >= config.burn_in) out.draws.positions.row(it - config.burn_in) = x.transpose();
  }
  out.acceptance = static_cast<double>(accepted_keep) / static_cast<double>(config.iters);
  out.burn_in_acceptance =
      config.burn_in > 0 ? static_cast<double>(accepted_burn) / static_cast<double>(config.burn_in) : 0.0;
  out.final_log_scale = log_lambda;
  return out;
}

void GvbState::validate() const {
  if (mean.size() < 1 || cov_factor.rows() != mean.size() || cov_factor.cols() != mean.size())
    throw std::invalid_argument("gvb state: mean and factor shapes disagree");
  if (!mean.allFinite() || !cov_factor.allFinite()) throw std::invalid_argument("gvb state: non-finite entries");
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    if (!(cov_factor(i, i) > 0.0)) throw std::invalid_argument("gvb state: factor diagonal must be > 0");
    for (Eigen::Index j = i + 1; j < mean.size(); ++j)
      if (cov_factor(i, j) != 0.0) throw std::invalid_argument("gvb state: factor must be lower triangular");
  }
}

void GvbConfig::validate(Eigen::Index dim) const {
  if (steps < 1) throw std::invalid_argument("gvb: steps must be >= 1");
  if (mc_samples < 1) throw std::invalid_argument("gvb: mc_samples must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("gvb: learning_rate must be >= 0");
  init.validate();
  if (init.mean.size() != dim) throw std::invalid_argument("gvb: init has the wrong dimension");
}

double elbo_estimate(const Target& target, const GvbState& state, const RowMatrix& z) {
  const Eigen::Index n = z.rows(), d = state.mean.size();
  std::vector<double> per(n);
#pragma omp parallel
  {
    Vector x(d);
#pragma omp for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
      x.noalias() = state.mean + state.cov_factor * z.row(i).transpose();
      per[i] = target.log_density(ConstPoint(x.data(), d));
    }
  }
  double total = 0.0;
  for (double v : per) total += v;
  return total / static_cast<double>(n) + state.cov_factor.diagonal().array().log().sum();
}

std::pair<Vector, Matrix> elbo_gradient(const Target& target, const GvbState& state, const RowMatrix& z) {
  const Eigen::Index n = z.rows(), d = state.mean.size();
  RowMatrix grads(n, d);
#pragma omp parallel
  {
    Vector x(d);
#pragma omp for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
      x.noalias() = state.mean + state.cov_factor * z.row(i).transpose();
      target.score(ConstPoint(x.data(), d), row_span(grads, i));
    }
  }
  Vector g_mean = Vector::Zero(d);
  Matrix g_factor = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    g_mean += grads.row(i).transpose();
    g_factor.noalias() += grads.row(i).transpose() * z.row(i);
  }
  g_mean /= static_cast<double>(n);
  g_factor /= static_cast<double>(n);
  g_factor = g_factor.triangularView<Eigen::Lower>().toDenseMatrix();
  g_factor.diagonal() += state.cov_factor.diagonal().cwiseInverse();
  return {g_mean, g_factor};
}

GvbResult gaussian_vb(const Target& target, const GvbConfig& config) {
  const Eigen::Index d = target.dim();
  config.validate(d);
  GvbResult out;
  out.state = config.init;
  Philox rng(config.seed, 0x677662ull);
  for (int step = 0; step < config.steps; ++step) {
    const RowMatrix z = standard_normal_matrix(rng, config.mc_samples, d);
    if (step % 10 == 0) out.elbo_trace.push_back({step, elbo_estimate(target, out.state, z)});
    auto [g_mean, g_factor] = elbo_gradient(target, out.state, z);
    out.state.mean += config.learning_rate * g_mean;
    out.state.cov_factor += config.learning_rate * g_factor;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!(out.state.cov_factor(i, i) >= 1e-6)) {
        std::ostringstream msg;
        msg << "step " << step << ": factor diagonal " << i << " = " << out.state.cov_factor(i, i)
            << " clamped to 1e-6";
        out.warnings.push_back(msg.str());
        out.state.cov_factor(i, i) = 1e-6;
      }
    }
    if (!out.state.mean.allFinite() || !out.state.cov_factor.allFinite()) {
      std::ostringstream msg;
      msg << "gaussian_vb: non-finite state at step " << step << "; lower the learning rate";
      throw NumericalError(msg.str());
    }
  }
  const RowMatrix z = standard_normal_matrix(rng, config.mc_samples, d);
  out.elbo_trace.push_back({config.steps, elbo_estimate(target, out.state, z)});
  return out;
}

ParticleCloud sample_gvb(const GvbState& state, Eigen::Index n, std::uint64_t seed) {
  state.validate();
  Philox rng(seed, 0x73616d70ull);
  return {gaussian_rows(rng, n, state.mean, state.cov_factor)};
}

}  // namespace wgd
