#include <cmath>

#include "doctest.h"
#include "wgd/linalg.hpp"
#include "wgd/oracle.hpp"
#include "wgd/random.hpp"

using namespace wgd;
using namespace wgd::oracle;

namespace {

GaussianState scalar(double mean, double var) {
  return {Vector::Constant(1, mean), Matrix::Constant(1, 1, var)};
}

GaussianState iso(Eigen::Index d, double mean, double var) {
  return {Vector::Constant(d, mean), var * Matrix::Identity(d, d)};
}

}  // namespace

TEST_CASE("oracle step closed form") {
  const auto next = oracle_step(scalar(0.0, 2.0), scalar(0.0, 1.0), 0.1);
  CHECK(next.covariance(0, 0) == doctest::Approx(1.805));
  CHECK(next.mean[0] == doctest::Approx(0.0));

  const auto pi = random_gaussian_state(3, 17);
  for (double eta : {1e-3, 0.1, 0.5}) {
    const auto same = oracle_step(pi, pi, eta);
    CHECK((same.mean - pi.mean).norm() < 1e-12);
    CHECK((same.covariance - pi.covariance).norm() < 1e-12);
  }
  // Mean update m' = A m + eta (P_pi m_pi - P_mu m_mu) in one dimension.
  const auto shifted = oracle_step(scalar(2.0, 2.0), scalar(-1.0, 1.0), 0.1);
  CHECK(shifted.mean[0] == doctest::Approx(0.95 * 2.0 + 0.1 * (-1.0 - 0.5 * 2.0)));
}

TEST_CASE("oracle step rejects oversized steps") {
  CHECK_THROWS_AS(oracle_step(scalar(0.0, 10.0), scalar(0.0, 1.0), 5.0), StepTooLargeError);
}

TEST_CASE("kl divergence") {
  CHECK(kl_gaussian(scalar(0.0, 1.0), scalar(1.0, 1.0)) == doctest::Approx(0.5));
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = random_gaussian_state(3, 100 + s);
    const auto b = random_gaussian_state(3, 200 + s);
    CHECK(kl_gaussian(a, a) < 1e-12);
    CHECK(kl_gaussian(a, b) > 0.0);
  }
  // Affine invariance.
  const auto a = random_gaussian_state(2, 1), b = random_gaussian_state(2, 2);
  Matrix t(2, 2);
  t << 2.0, 0.5, -1.0, 1.5;
  const Vector shift = (Vector(2) << 3.0, -4.0).finished();
  auto map = [&](const GaussianState& g) {
    return GaussianState{t * g.mean + shift, t * g.covariance * t.transpose()};
  };
  CHECK(kl_gaussian(map(a), map(b)) == doctest::Approx(kl_gaussian(a, b)).epsilon(1e-10));
}

TEST_CASE("bures wasserstein distance") {
  const auto a = random_gaussian_state(3, 5);
  CHECK(w2_gaussian(a, a) < 1e-6);
  GaussianState moved = a;
  const Vector v = (Vector(3) << 1.0, -2.0, 2.0).finished();
  moved.mean += v;
  CHECK(w2_gaussian(a, moved) == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(w2_gaussian(scalar(0.0, 4.0), scalar(0.0, 1.0)) == doctest::Approx(1.0));

  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = random_gaussian_state(3, 300 + s);
    const auto y = random_gaussian_state(3, 400 + s);
    const auto z = random_gaussian_state(3, 500 + s);
    CHECK(std::abs(w2_gaussian(x, y) - w2_gaussian(y, x)) < 1e-8);
    CHECK(w2_gaussian(x, z) <= w2_gaussian(x, y) + w2_gaussian(y, z) + 1e-8);
  }
}

TEST_CASE("gradient norm matches a Monte Carlo estimate") {
  const auto mu = random_gaussian_state(2, 7);
  const auto pi = random_gaussian_state(2, 8);
  const Matrix pm = mu.covariance.inverse(), pp = pi.covariance.inverse();
  Philox rng(1, 0);
  const Matrix chol = mu.covariance.llt().matrixL();
  const RowMatrix x = gaussian_rows(rng, 200000, mu.mean, chol);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    acc += (pp * (xi - pi.mean) - pm * (xi - mu.mean)).squaredNorm();
  }
  CHECK(grad_norm_sq(mu, pi) == doctest::Approx(acc / x.rows()).epsilon(0.02));
  CHECK(grad_norm_sq(pi, pi) == doctest::Approx(0.0));
}

TEST_CASE("descent inequality sweep") {
  const auto mu = scalar(0.0, 2.0), pi = scalar(0.0, 1.0);
  CHECK(kl_gaussian(oracle_step(mu, pi, 0.01), pi) < kl_gaussian(mu, pi));

  const auto rep = check_descent(iso(2, 3.0, 2.0), iso(2, 0.0, 1.0), log_space(1e-4, 1e-1, 31), 1.0);
  CHECK(rep.descent_ok);
  CHECK(rep.remainder_bounded);
  CHECK(std::isfinite(rep.remainder_ratio));
  for (const auto& r : rep.rows) CHECK(r.delta_f < 0.0);

  const auto flat = check_descent(pi, pi, log_space(1e-4, 1e-2, 5), 1.0);
  for (const auto& r : flat.rows) {
    CHECK(r.delta_f == doctest::Approx(0.0));
    CHECK(r.grad_sq == doctest::Approx(0.0));
  }
}

TEST_CASE("log space") {
  const auto v = log_space(1e-4, 1e-2, 3);
  REQUIRE(v.size() == 3);
  CHECK(v[0] == doctest::Approx(1e-4));
  CHECK(v[1] == doctest::Approx(1e-3));
  CHECK(v[2] == doctest::Approx(1e-2));
}

TEST_CASE("one-step W2 contraction") {
  const auto mu = scalar(0.0, 2.0), pi = scalar(0.0, 1.0);
  const double l = lipschitz_surrogate(mu, pi);
  // 6 sigma of mu reaches |x| = 6 sqrt(2); grad V(x) = x there.
  CHECK(l >= 6.0 * std::sqrt(2.0) - 1e-9);
  const auto rep = check_w2_contraction(mu, pi, 0.01, l);
  CHECK(rep.holds);

  const auto same = check_w2_contraction(pi, pi, 0.01, l);
  CHECK(same.holds);
  CHECK(same.rhs == doctest::Approx(0.01 * 0.01 * l * l));

  const auto big = check_w2_contraction(mu, pi, 0.5, l);
  CHECK_FALSE(big.contraction_regime);
}

TEST_CASE("KL convergence witness") {
  const auto mu0 = iso(2, 3.0, 2.0), pi = iso(2, 0.0, 1.0);
  const auto rep = check_kl_convergence(mu0, pi, {0.1, 0.6}, 5000, 1.0, 1.0, 100);
  CHECK(rep.ratio < 1e-3);
  CHECK(rep.monotone);
  CHECK(rep.talagrand_ok);
  CHECK(rep.bound_violations == 0);
  CHECK(rep.kl.size() == 5001);

  const auto fixed = check_kl_convergence(pi, pi, {0.01, 0.6}, 50, 1.0, 1.0, 10);
  CHECK(fixed.f0 == doctest::Approx(0.0));
  CHECK(fixed.bound_violations == 0);

  CHECK_THROWS_AS(check_kl_convergence(mu0, pi, {1.5, 1.0}, 10, 1.0, 1.0, 5), ConfigError);
}

TEST_CASE("perturbations") {
  const auto mu = iso(2, 1.0, 2.0), pi = iso(2, 0.0, 1.0);
  const auto plain = oracle_step(mu, pi, 0.05);
  for (auto kind : {PerturbationKind::none, PerturbationKind::bounded_bias, PerturbationKind::zero_mean_noise}) {
    PerturbationSpec zero;
    zero.kind = kind;
    const auto s = perturbed_oracle_step(mu, pi, 0.05, zero);
    CHECK((s.state.mean - plain.mean).norm() < 1e-14);
    CHECK((s.state.covariance - plain.covariance).norm() < 1e-14);
  }

  PerturbationSpec bad;
  bad.magnitude = -1.0;
  CHECK_THROWS_AS(bad.validate(2), std::invalid_argument);
  CHECK(parse_perturbation_kind("bounded-bias") == PerturbationKind::bounded_bias);
  CHECK(to_string(PerturbationKind::zero_mean_noise) == "zero-mean-noise");
  CHECK_THROWS(parse_perturbation_kind("wobble"));

  // Bias ten times the gradient norm, pointing against the mean gradient.
  const Matrix pp = pi.covariance.inverse();
  const Vector mean_grad = pp * (mu.mean - pi.mean);
  const double g = std::sqrt(grad_norm_sq(mu, pi));
  PerturbationSpec bias;
  bias.kind = PerturbationKind::bounded_bias;
  bias.magnitude = 10.0 * g;
  bias.direction = -mean_grad;
  const auto step = perturbed_oracle_step(mu, pi, 0.01, bias);
  CHECK_FALSE(step.direction_ok);
  CHECK(step.delta < 0.0);
}

TEST_CASE("noise keeps the averaged-iterate bound") {
  PerturbationSpec noise;
  noise.kind = PerturbationKind::zero_mean_noise;
  noise.magnitude = 0.1;
  noise.seed = 3;
  const auto rep = check_noise_bound(iso(2, 3.0, 2.0), iso(2, 0.0, 1.0), {0.01, 0.6}, 500, noise, 10);
  CHECK(rep.holds);
  CHECK(rep.mean_f_avg <= rep.bound);
}

TEST_CASE("particle perturbed step without noise matches the Gaussian step") {
  const auto mu = iso(2, 1.0, 2.0), pi = iso(2, 0.0, 1.0);
  Philox rng(2, 0);
  const Eigen::Index n = 100000;
  ParticleCloud cloud{gaussian_rows(rng, n, mu.mean, mu.covariance.llt().matrixL())};
  PerturbationSpec none;
  const auto next = perturbed_particle_step(cloud, pi, 0.05, none);
  const auto fit = fit_gaussian(next.positions);
  const auto exact = oracle_step(mu, pi, 0.05);
  const double tol = 3.0 / std::sqrt(static_cast<double>(n)) * std::sqrt(exact.covariance.trace());
  CHECK((fit.mean - exact.mean).cwiseAbs().maxCoeff() < tol);
  CHECK((fit.covariance - exact.covariance).cwiseAbs().maxCoeff() < 3.0 * tol);
}

TEST_CASE("random gaussian states are valid and reproducible") {
  const auto a = random_gaussian_state(4, 9), b = random_gaussian_state(4, 9);
  CHECK(a.mean == b.mean);
  CHECK(a.covariance == b.covariance);
  CHECK(linalg::is_spd(a.covariance));
}
