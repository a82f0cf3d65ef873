#include "wgd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "wgd/linalg.hpp"
#include "wgd/random.hpp"

namespace wgd::oracle {
namespace {

Matrix precision(const Matrix& cov) {
  Matrix p = cov.llt().solve(Matrix::Identity(cov.rows(), cov.cols()));
  return 0.5 * (p + p.transpose());
}

/// Affine Wasserstein gradient g(x) = a x + c.
struct AffineGradient {
  Matrix a;
  Vector c;
};

AffineGradient wasserstein_gradient(const GaussianState& mu, const GaussianState& pi) {
  const Matrix p_mu = precision(mu.covariance);
  const Matrix p_pi = precision(pi.covariance);
  return {p_pi - p_mu, p_mu * mu.mean - p_pi * pi.mean};
}

void check_dims(const GaussianState& mu, const GaussianState& pi) {
  if (mu.dim() != pi.dim()) throw std::invalid_argument("gaussian states differ in dimension");
}

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::string flag(bool b) { return b ? "true" : "false"; }

/// Pushes mu through x -> x - eta (a x + c + shift).
GaussianState push_affine(const GaussianState& mu, const AffineGradient& g, double eta,
                          const Vector& shift) {
  const Eigen::Index d = mu.dim();
  Matrix map = Matrix::Identity(d, d) - eta * g.a;
  map = 0.5 * (map + map.transpose());
  Eigen::LLT<Matrix> llt(map);
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "oracle step: eta=" << eta << " makes I - eta (P_pi - P_mu) indefinite (lambda_max(P_pi - P_mu)="
        << linalg::eigen_range(g.a).second << ")";
    throw StepTooLargeError(msg.str());
  }
  GaussianState out;
  out.mean = map * mu.mean - eta * (g.c + shift);
  out.covariance = map * mu.covariance * map.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

}  // namespace

GaussianState oracle_step(const GaussianState& mu, const GaussianState& pi, double eta) {
  check_dims(mu, pi);
  if (!(eta >= 0.0)) throw std::invalid_argument("oracle step: eta must be >= 0");
  return push_affine(mu, wasserstein_gradient(mu, pi), eta, Vector::Zero(mu.dim()));
}

double kl_gaussian(const GaussianState& mu, const GaussianState& pi) {
  check_dims(mu, pi);
  const Matrix p_pi = precision(pi.covariance);
  const Vector diff = pi.mean - mu.mean;
  const double value = 0.5 * ((p_pi * mu.covariance).trace() + diff.dot(p_pi * diff) -
                              static_cast<double>(mu.dim()) + linalg::log_det_spd(pi.covariance) -
                              linalg::log_det_spd(mu.covariance));
  return std::max(value, 0.0);
}

W2Result w2_gaussian_detailed(const GaussianState& mu, const GaussianState& pi) {
  check_dims(mu, pi);
  const auto root_pi = linalg::symmetric_sqrt(pi.covariance);
  const auto inner = linalg::symmetric_sqrt(root_pi.root * mu.covariance * root_pi.root);
  const double bures = mu.covariance.trace() + pi.covariance.trace() - 2.0 * inner.root.trace();
  W2Result out;
  out.condition = inner.condition;
  out.value = std::sqrt((mu.mean - pi.mean).squaredNorm() + std::max(bures, 0.0));
  return out;
}

double w2_gaussian(const GaussianState& mu, const GaussianState& pi) {
  return w2_gaussian_detailed(mu, pi).value;
}

double grad_norm_sq(const GaussianState& mu, const GaussianState& pi) {
  check_dims(mu, pi);
  const auto g = wasserstein_gradient(mu, pi);
  const Vector at_mean = g.a * mu.mean + g.c;
  return at_mean.squaredNorm() + (g.a * mu.covariance * g.a.transpose()).trace();
}

GaussianState fit_gaussian(const RowMatrix& cloud) {
  if (cloud.rows() < 1) throw std::invalid_argument("fit_gaussian: empty cloud");
  GaussianState s;
  s.mean = linalg::row_mean(cloud);
  s.covariance = linalg::row_covariance(cloud, s.mean);
  return s;
}

double lipschitz_surrogate(const GaussianState& mu, const GaussianState& pi, double radius) {
  check_dims(mu, pi);
  // sup over {m + S^{1/2} u : |u| <= r} of |P (x - center)| is bounded by
  // |P (m - center)| + r |P S^{1/2}|_2.
  auto sup_over = [radius](const Matrix& p, const Vector& center, const GaussianState& region) {
    const Matrix root = linalg::symmetric_sqrt(region.covariance).root;
    const Matrix pr = p * root;
    const double op = std::sqrt(std::max(linalg::eigen_range(pr.transpose() * pr).second, 0.0));
    return (p * (region.mean - center)).norm() + radius * op;
  };
  const Matrix p_pi = precision(pi.covariance);
  const Matrix p_mu = precision(mu.covariance);
  const double l_v = std::max(sup_over(p_pi, pi.mean, pi), sup_over(p_pi, pi.mean, mu));
  const double l_h = std::max(sup_over(p_mu, mu.mean, mu), sup_over(p_mu, mu.mean, pi));
  return std::max(l_v, l_h);
}

std::vector<double> log_space(double lo, double hi, int n) {
  if (n < 2 || !(lo > 0) || !(hi > lo)) throw std::invalid_argument("log_space: need n >= 2 and 0 < lo < hi");
  std::vector<double> out(n);
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < n; ++i) out[i] = std::exp(a + (b - a) * i / (n - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

DescentReport check_descent(const GaussianState& mu, const GaussianState& pi,
                        const std::vector<double>& etas, double beta, double grad_floor) {
  DescentReport rep;
  rep.beta = beta;
  const double f_mu = kl_gaussian(mu, pi);
  const double g2 = grad_norm_sq(mu, pi);
  std::vector<double> sorted = etas;
  std::sort(sorted.begin(), sorted.end());
  double max_abs = 0.0, min_abs = std::numeric_limits<double>::infinity();
  bool threshold_open = true;
  rep.c_hat = 0.0;
  for (double eta : sorted) {
    const GaussianState nu = oracle_step(mu, pi, eta);
    DescentRow row;
    row.eta = eta;
    row.delta_f = kl_gaussian(nu, pi) - f_mu;
    row.grad_sq = g2;
    row.remainder = (row.delta_f + eta * g2) / (eta * eta);
    row.c_needed = (row.delta_f + eta * (1.0 - 1.5 * beta * eta) * g2) / (eta * eta);
    rep.c_hat = std::max(rep.c_hat, row.c_needed);
    const bool descended = !(g2 > grad_floor) || row.delta_f < 0.0;
    if (!descended) rep.descent_ok = false;
    if (descended && threshold_open) rep.descent_threshold = eta;
    else threshold_open = false;
    if (!std::isfinite(row.remainder)) rep.remainder_bounded = false;
    max_abs = std::max(max_abs, std::abs(row.remainder));
    min_abs = std::min(min_abs, std::abs(row.remainder));
    rep.rows.push_back(row);
  }
  if (max_abs == 0.0) rep.remainder_ratio = 1.0;
  else rep.remainder_ratio = min_abs > 0.0 ? max_abs / min_abs : std::numeric_limits<double>::infinity();
  rep.remainder_bounded = rep.remainder_bounded && std::isfinite(rep.remainder_ratio);
  return rep;
}

KeyValues DescentReport::key_values() const {
  KeyValues kv = {{"check", "descent"},
                  {"beta", num(beta)},
                  {"sweep_size", std::to_string(rows.size())},
                  {"descent_ok", flag(descent_ok)},
                  {"descent_threshold", num(descent_threshold)},
                  {"c_hat", num(c_hat)},
                  {"remainder_ratio", num(remainder_ratio)},
                  {"remainder_bounded", flag(remainder_bounded)}};
  return kv;
}

ContractionReport check_w2_contraction(const GaussianState& mu, const GaussianState& pi, double eta,
                                    double lipschitz) {
  ContractionReport rep;
  rep.eta = eta;
  rep.lipschitz = lipschitz;
  const GaussianState nu = oracle_step(mu, pi, eta);
  const double before = w2_gaussian(mu, pi);
  const double after = w2_gaussian(nu, pi);
  rep.w2_sq_before = before * before;
  rep.w2_sq_after = after * after;
  rep.f_mu = kl_gaussian(mu, pi);
  rep.grad_sq = grad_norm_sq(mu, pi);
  rep.rhs = rep.w2_sq_before - 2.0 * eta * rep.f_mu + eta * eta * lipschitz * lipschitz;
  const double tol = 1e-12 * std::max(1.0, rep.w2_sq_before);
  rep.holds = rep.w2_sq_after <= rep.rhs + tol;
  rep.contraction_regime = lipschitz > 0.0 && eta < 2.0 * rep.f_mu / (lipschitz * lipschitz);
  return rep;
}

KeyValues ContractionReport::key_values() const {
  return {{"check", "w2_contraction"},    {"eta", num(eta)},
          {"lipschitz", num(lipschitz)},     {"w2_sq_before", num(w2_sq_before)},
          {"w2_sq_after", num(w2_sq_after)}, {"f_mu", num(f_mu)},
          {"rhs", num(rhs)},                 {"grad_sq", num(grad_sq)},
          {"holds", flag(holds)},            {"contraction_regime", flag(contraction_regime)}};
}

ConvergenceReport check_kl_convergence(const GaussianState& mu0, const GaussianState& pi,
                                    const StepSchedule& schedule, long steps, double alpha,
                                    double beta, long prefix) {
  schedule.validate();
  if (steps < 1) throw std::invalid_argument("convergence check: steps must be >= 1");
  ConvergenceReport rep;
  rep.steps = steps;
  rep.alpha = alpha;
  rep.beta = beta;
  rep.prefix = std::min(prefix, steps);

  GaussianState mu = mu0;
  rep.kl.push_back(kl_gaussian(mu, pi));
  const double w0 = w2_gaussian(mu, pi);
  rep.w2_sq.push_back(w0 * w0);
  std::vector<double> sum_eta(steps), sum_eta_sq(steps);
  double s1 = 0.0, s2 = 0.0;
  for (long k = 0; k < steps; ++k) {
    const double eta = step_size(schedule, k);
    s1 += eta;
    s2 += eta * eta;
    sum_eta[k] = s1;
    sum_eta_sq[k] = s2;
    mu = oracle_step(mu, pi, eta);
    rep.kl.push_back(kl_gaussian(mu, pi));
    const double w = w2_gaussian(mu, pi);
    rep.w2_sq.push_back(w * w);
  }

  rep.f0 = rep.kl.front();
  rep.f_final = rep.kl.back();
  rep.ratio = rep.f0 > 0.0 ? rep.f_final / rep.f0 : 0.0;

  rep.worst_talagrand_slack = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < rep.kl.size(); ++k) {
    const double slack = (2.0 / alpha) * rep.kl[k] - rep.w2_sq[k];
    rep.worst_talagrand_slack = std::min(rep.worst_talagrand_slack, slack);
    if (slack < -1e-10 * std::max(1.0, rep.w2_sq[k])) rep.talagrand_ok = false;
    if (static_cast<long>(k) > rep.monotone_from && rep.kl[k] > rep.kl[k - 1] * (1.0 + 1e-12) + 1e-300)
      rep.monotone = false;
  }

  // F(mu_{T+1}) <= (F0 + C S2(T)) / (1 + 2 alpha S1(T) - 3 alpha beta S2(T)).
  auto denominator = [&](long t) {
    const double den = 1.0 + 2.0 * alpha * sum_eta[t] - 3.0 * alpha * beta * sum_eta_sq[t];
    if (!(den > 0.0)) {
      std::ostringstream msg;
      msg << "bound denominator is nonpositive at T=" << t << " (step schedule too aggressive)";
      throw ConfigError("schedule", msg.str());
    }
    return den;
  };
  rep.c_hat = 0.0;
  for (long t = 0; t < rep.prefix; ++t) {
    const double needed = (rep.kl[t + 1] * denominator(t) - rep.f0) / sum_eta_sq[t];
    rep.c_hat = std::max(rep.c_hat, needed);
  }
  for (long t = 0; t < steps; ++t) {
    const double bound = (rep.f0 + rep.c_hat * sum_eta_sq[t]) / denominator(t);
    const double tol = 1e-12 * std::max(1.0, rep.f0);
    if (rep.kl[t + 1] > bound + tol) ++rep.bound_violations;
    if (rep.w2_sq[t + 1] > (2.0 / alpha) * bound + tol) ++rep.w_bound_violations;
  }
  return rep;
}

KeyValues ConvergenceReport::key_values() const {
  return {{"check", "convergence_bound"},
          {"steps", std::to_string(steps)},
          {"alpha", num(alpha)},
          {"beta", num(beta)},
          {"f0", num(f0)},
          {"f_final", num(f_final)},
          {"ratio", num(ratio)},
          {"monotone_after", std::to_string(monotone_from)},
          {"monotone", flag(monotone)},
          {"talagrand_ok", flag(talagrand_ok)},
          {"worst_talagrand_slack", num(worst_talagrand_slack)},
          {"prefix", std::to_string(prefix)},
          {"c_hat", num(c_hat)},
          {"bound_violations", std::to_string(bound_violations)},
          {"w_bound_violations", std::to_string(w_bound_violations)}};
}

void PerturbationSpec::validate(Eigen::Index dim) const {
  if (!(magnitude >= 0.0)) throw std::invalid_argument("perturbation: magnitude must be >= 0");
  if (!(lipschitz_cap >= 0.0)) throw std::invalid_argument("perturbation: lipschitz_cap must be >= 0");
  if (direction) {
    if (direction->size() != dim) throw std::invalid_argument("perturbation: direction has wrong dimension");
    if (!(direction->norm() > 0.0)) throw std::invalid_argument("perturbation: direction must be nonzero");
  }
}

PerturbationKind parse_perturbation_kind(const std::string& name) {
  if (name == "none") return PerturbationKind::none;
  if (name == "bounded-bias") return PerturbationKind::bounded_bias;
  if (name == "zero-mean-noise") return PerturbationKind::zero_mean_noise;
  throw std::invalid_argument("unknown perturbation kind '" + name + "'");
}

std::string to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::none: return "none";
    case PerturbationKind::bounded_bias: return "bounded-bias";
    case PerturbationKind::zero_mean_noise: return "zero-mean-noise";
  }
  return "none";
}

namespace {

/// The constant error vector for this step; E|xi|^2 = magnitude^2.
Vector error_vector(const PerturbationSpec& spec, Eigen::Index d, long step_index) {
  switch (spec.kind) {
    case PerturbationKind::none: return Vector::Zero(d);
    case PerturbationKind::bounded_bias: {
      Vector u;
      if (spec.direction) {
        u = *spec.direction;
      } else {
        Philox rng(spec.seed, 0x62696173ull);
        u = standard_normal_vector(rng, d);
      }
      return spec.magnitude * u / u.norm();
    }
    case PerturbationKind::zero_mean_noise: {
      Philox rng(spec.seed, static_cast<std::uint64_t>(step_index));
      return spec.magnitude * standard_normal_vector(rng, d) / std::sqrt(static_cast<double>(d));
    }
  }
  return Vector::Zero(d);
}

}  // namespace

PerturbedStep perturbed_oracle_step(const GaussianState& mu, const GaussianState& pi, double eta,
                                    const PerturbationSpec& spec, long step_index) {
  check_dims(mu, pi);
  spec.validate(mu.dim());
  const auto g = wasserstein_gradient(mu, pi);
  PerturbedStep out;
  out.xi = error_vector(spec, mu.dim(), step_index);
  out.xi_norm_sq = out.xi.squaredNorm();
  const Vector g_mean = g.a * mu.mean + g.c;
  const double g2 = g_mean.squaredNorm() + (g.a * mu.covariance * g.a.transpose()).trace();
  if (g2 > 0.0) {
    out.delta = (g2 + out.xi.dot(g_mean)) / std::sqrt(g2);
    out.direction_ok = out.delta > 0.0;
  }
  out.state = push_affine(mu, g, eta, out.xi);
  return out;
}

ParticleCloud perturbed_particle_step(const ParticleCloud& cloud, const GaussianState& pi,
                                      double eta, const PerturbationSpec& spec, long step_index) {
  spec.validate(cloud.dim());
  const GaussianState fit = fit_gaussian(cloud.positions);
  const auto g = wasserstein_gradient(fit, pi);
  const Vector xi = error_vector(spec, cloud.dim(), step_index);
  ParticleCloud out = cloud;
  const Matrix map = Matrix::Identity(cloud.dim(), cloud.dim()) - eta * g.a;
  const Vector shift = eta * (g.c + xi);
  out.positions = cloud.positions * map.transpose();
  out.positions.rowwise() -= shift.transpose();
  return out;
}

NoiseBoundReport check_noise_bound(const GaussianState& mu0, const GaussianState& pi,
                              const StepSchedule& schedule, long steps, const PerturbationSpec& spec,
                              int repetitions) {
  schedule.validate();
  if (steps < 1 || repetitions < 1) throw std::invalid_argument("noise bound check: steps and repetitions must be >= 1");
  NoiseBoundReport rep;
  rep.steps = steps;
  rep.repetitions = repetitions;
  rep.magnitude = spec.magnitude;
  for (long k = 0; k <= steps; ++k) {
    const double eta = step_size(schedule, k);
    rep.sum_eta += eta;
    rep.sum_eta_sq += eta * eta;
  }
  const double w0 = w2_gaussian(mu0, pi);
  rep.w2_sq_initial = w0 * w0;
  rep.min_delta = std::numeric_limits<double>::infinity();
  double lip = 0.0;
  double total = 0.0;
  for (int r = 0; r < repetitions; ++r) {
    PerturbationSpec run = spec;
    run.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(r));
    GaussianState mu = mu0;
    double weighted = 0.0;
    for (long k = 0; k <= steps; ++k) {
      const double eta = step_size(schedule, k);
      weighted += eta * kl_gaussian(mu, pi);
      lip = std::max(lip, lipschitz_surrogate(mu, pi));
      if (k == steps) break;
      auto step = perturbed_oracle_step(mu, pi, eta, run, k);
      rep.min_delta = std::min(rep.min_delta, step.delta);
      mu = std::move(step.state);
    }
    total += weighted / rep.sum_eta;
  }
  rep.lipschitz = lip;
  rep.mean_f_avg = total / repetitions;
  const double c2 = spec.magnitude * spec.magnitude;
  rep.bound = (rep.w2_sq_initial + 2.0 * (lip * lip + c2) * rep.sum_eta_sq) / (2.0 * rep.sum_eta);
  rep.holds = rep.mean_f_avg <= rep.bound;
  return rep;
}

KeyValues NoiseBoundReport::key_values() const {
  return {{"check", "noise_bound"},
          {"steps", std::to_string(steps)},
          {"repetitions", std::to_string(repetitions)},
          {"magnitude", num(magnitude)},
          {"lipschitz", num(lipschitz)},
          {"sum_eta", num(sum_eta)},
          {"sum_eta_sq", num(sum_eta_sq)},
          {"w2_sq_initial", num(w2_sq_initial)},
          {"mean_f_avg", num(mean_f_avg)},
          {"bound", num(bound)},
          {"holds", flag(holds)},
          {"min_delta", num(min_delta)}};
}

GaussianState random_gaussian_state(Eigen::Index dim, std::uint64_t seed, double mean_scale,
                                    double log_spread) {
  if (dim < 1) throw std::invalid_argument("random_gaussian_state: dim must be >= 1");
  Philox rng(seed, 0x72676175ull);
  std::uniform_real_distribution<double> unif(-log_spread, log_spread);
  GaussianState s;
  s.mean = mean_scale * standard_normal_vector(rng, dim);
  const Matrix q = Eigen::HouseholderQR<Matrix>(standard_normal_matrix(rng, dim, dim)).householderQ();
  Vector eig(dim);
  for (Eigen::Index i = 0; i < dim; ++i) eig[i] = std::exp(unif(rng));
  s.covariance = q * eig.asDiagonal() * q.transpose();
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
  return s;
}

std::string format_key_values(const KeyValues& kv) {
  std::ostringstream out;
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  return out.str();
}

}  // namespace wgd::oracle
