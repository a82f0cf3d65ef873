#include <cmath>

#include "doctest.h"
#include "wgd/engine.hpp"
#include "wgd/linalg.hpp"
#include "wgd/oracle.hpp"
#include "wgd/random.hpp"

using namespace wgd;

namespace {

VectorField scaled_identity(double c) {
  return [c](ConstPoint x, Point out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = c * x[i];
  };
}

ParticleCloud random_cloud(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Philox rng(seed, 0);
  return {standard_normal_matrix(rng, n, d)};
}

RunConfig exact_run(const GaussianState& mu0, int iters) {
  RunConfig run;
  run.step = {0.01, 0.6};
  run.stop.max_iters = iters;
  run.stop.patience = 1000000;
  run.score.mode = ScoreMode::gaussian_fit;
  run.mu0 = mu0;
  run.seed = 5;
  return run;
}

}  // namespace

TEST_CASE("step size schedule") {
  CHECK(step_size({0.01, 0.6}, 0) == doctest::Approx(0.01));
  CHECK(step_size({1.0, 1.0}, 1) == doctest::Approx(0.5));
  CHECK_THROWS_AS((StepSchedule{0.01, 0.5}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((StepSchedule{0.01, 1.5}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((StepSchedule{0.0, 0.6}).validate(), std::invalid_argument);

  // Sums over dyadic blocks [2^k, 2^(k+1)): for eta they grow by 2^0.4 per
  // block (divergent series), for eta^2 they shrink by 2^-0.2 (convergent).
  const StepSchedule s{0.01, 0.6};
  std::vector<double> b1, b2;
  for (int k = 0; k < 20; ++k) {
    double s1 = 0.0, s2 = 0.0;
    for (long t = (1L << k); t < (1L << (k + 1)); ++t) {
      s1 += step_size(s, t);
      s2 += step_size(s, t) * step_size(s, t);
    }
    b1.push_back(s1);
    b2.push_back(s2);
  }
  for (int k = 10; k < 20; ++k) {
    CHECK(b1[k] / b1[k - 1] == doctest::Approx(std::pow(2.0, 0.4)).epsilon(1e-3));
    CHECK(b2[k] / b2[k - 1] == doctest::Approx(std::pow(2.0, -0.2)).epsilon(1e-3));
  }
}

TEST_CASE("wgd step examples") {
  ParticleCloud one{RowMatrix::Constant(1, 1, 1.0)};
  const auto next = wgd_step(one, scaled_identity(1.0), scaled_identity(-1.0), 0.1);
  CHECK(next.positions(0, 0) == doctest::Approx(0.8));
  CHECK(one.positions(0, 0) == 1.0);

  const auto cloud = random_cloud(50, 3, 1);
  const auto same = wgd_step(cloud, scaled_identity(-1.0), scaled_identity(-1.0), 0.7);
  CHECK(same.positions == cloud.positions);
  const auto idle = wgd_step(cloud, scaled_identity(2.0), scaled_identity(-1.0), 0.0);
  CHECK(idle.positions == cloud.positions);
}

TEST_CASE("wgd step reports the offending particle") {
  auto cloud = random_cloud(4, 2, 2);
  const VectorField blowup = [](ConstPoint x, Point out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 10.0 ? std::nan("") : 0.0;
  };
  cloud.positions(2, 1) = 11.0;
  try {
    wgd_step(cloud, blowup, scaled_identity(0.0), 0.1);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("particle 2") != std::string::npos);
  }
}

TEST_CASE("wgd step commutes with translation in the Gaussian case") {
  Matrix cov(2, 2);
  cov << 2.0, 0.4, 0.4, 1.0;
  const GaussianState mu{(Vector(2) << 1.0, -1.0).finished(), cov};
  const GaussianState pi{(Vector(2) << -0.5, 0.5).finished(), Matrix::Identity(2, 2)};
  const Vector v = (Vector(2) << 3.0, -7.0).finished();
  const GaussianState mu_v{mu.mean + v, mu.covariance};
  const GaussianState pi_v{pi.mean + v, pi.covariance};

  const auto cloud = random_cloud(200, 2, 3);
  auto shifted = cloud;
  shifted.positions.rowwise() += v.transpose();

  auto a = wgd_step(cloud, gaussian_score_field(mu), gaussian_score_field(pi), 0.05);
  a.positions.rowwise() += v.transpose();
  const auto b = wgd_step(shifted, gaussian_score_field(mu_v), gaussian_score_field(pi_v), 0.05);
  CHECK((a.positions - b.positions).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("annealed score") {
  const GaussianState mu0{Vector::Zero(2), Matrix::Identity(2, 2)};
  const Vector m = (Vector(2) << 2.0, -4.0).finished();
  const GaussianState pi{m, Matrix::Identity(2, 2)};
  const auto s0 = gaussian_score_field(mu0);
  const auto sp = gaussian_score_field(pi);
  const Vector x = (Vector(2) << 0.5, 1.5).finished();
  Vector out(2), ref(2);

  annealed_score(sp, s0, 0.0, {x.data(), 2}, {out.data(), 2});
  s0({x.data(), 2}, {ref.data(), 2});
  CHECK((out - ref).norm() == 0.0);
  annealed_score(sp, s0, 1.0, {x.data(), 2}, {out.data(), 2});
  sp({x.data(), 2}, {ref.data(), 2});
  CHECK((out - ref).norm() == 0.0);
  annealed_score(sp, s0, 0.5, {x.data(), 2}, {out.data(), 2});
  CHECK((out + (x - 0.5 * m)).norm() < 1e-14);
}

TEST_CASE("err norm") {
  ParticleCloud two{(RowMatrix(2, 1) << 1.0, -3.0).finished()};
  // s(x) = 0, target score = -x: residuals are x itself.
  CHECK(err_norm(two, scaled_identity(0.0), scaled_identity(-1.0)) == doctest::Approx(5.0));
  const auto cloud = random_cloud(30, 2, 4);
  CHECK(err_norm(cloud, scaled_identity(-1.0), scaled_identity(-1.0)) == 0.0);
  RowMatrix reversed = cloud.positions.colwise().reverse();
  CHECK(err_norm({reversed}, scaled_identity(0.3), scaled_identity(-1.0)) ==
        doctest::Approx(err_norm(cloud, scaled_identity(0.3), scaled_identity(-1.0))).epsilon(1e-14));
}

TEST_CASE("stop monitor triggers at the patience-th flat observation") {
  StopRule rule;
  rule.patience = 5;
  StopMonitor m(rule);
  CHECK_FALSE(m.observe(2.0));
  CHECK_FALSE(m.observe(1.0));
  for (int i = 1; i < 5; ++i) CHECK_FALSE(m.observe(1.0));
  CHECK(m.observe(1.0));

  StopMonitor tiny(rule);
  tiny.observe(1.0);
  // A gain below the relative threshold is not an improvement.
  for (int i = 1; i < 5; ++i) CHECK_FALSE(tiny.observe(1.0 - 1e-9 * i));
  CHECK(tiny.observe(1.0 - 5e-9));
}

TEST_CASE("annealing levels are recorded") {
  const GaussianState mu0{Vector::Constant(2, 1.0), Matrix::Identity(2, 2)};
  const auto target = gaussian_target(Vector::Zero(2), Matrix::Identity(2, 2));
  auto run = exact_run(mu0, 60);
  run.anneal = AnnealSchedule{50};
  const auto res = run_wgd(initial_cloud(mu0, 500, 1), *target, run);
  REQUIRE(res.trace.records.size() == 60);
  for (std::size_t t = 0; t < 60; ++t) {
    CHECK(res.trace.records[t].t == static_cast<long>(t));
    CHECK(res.trace.records[t].anneal == doctest::Approx(std::min(1.0, t / 50.0)));
  }
  CHECK(res.trace.stop_reason == "max_iters");
}

TEST_CASE("target equal to mu0 is a fixed point of exact-score WGD") {
  const GaussianState mu0{Vector::Zero(2), Matrix::Identity(2, 2)};
  const auto target = gaussian_target(mu0.mean, mu0.covariance);
  const auto init = initial_cloud(mu0, 5000, 9);
  const auto res = run_wgd(init, *target, exact_run(mu0, 100));
  const Vector m0 = linalg::row_mean(init.positions), m1 = linalg::row_mean(res.cloud.positions);
  const Matrix c0 = linalg::row_covariance(init.positions, m0);
  const Matrix c1 = linalg::row_covariance(res.cloud.positions, m1);
  CHECK((m1 - m0).cwiseAbs().maxCoeff() < 1e-2);
  CHECK((c1 - c0).cwiseAbs().maxCoeff() < 1e-2);
  for (const auto& r : res.trace.records) CHECK(r.err < 1e-2);
}

TEST_CASE("exact-score particles follow the closed-form recursion") {
  const GaussianState mu0{(Vector(2) << 3.0, 3.0).finished(), 2.0 * Matrix::Identity(2, 2)};
  const GaussianState pi{Vector::Zero(2), Matrix::Identity(2, 2)};
  const auto target = gaussian_target(pi.mean, pi.covariance);
  const auto init = initial_cloud(mu0, 20000, 4);
  const auto run = exact_run(mu0, 50);
  const auto res = run_wgd(init, *target, run);

  // Start the recursion from the empirical moments so sampling error cancels.
  GaussianState exact = oracle::fit_gaussian(init.positions);
  for (long k = 0; k < 50; ++k) exact = oracle::oracle_step(exact, pi, step_size(run.step, k));
  const auto fit = oracle::fit_gaussian(res.cloud.positions);
  CHECK((fit.mean - exact.mean).norm() / exact.mean.norm() < 1e-3);
  CHECK((fit.covariance - exact.covariance).norm() / exact.covariance.norm() < 1e-3);

  // Err trends down.
  const auto& recs = res.trace.records;
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += recs[i].err;
    last += recs[recs.size() - 1 - i].err;
  }
  CHECK(last < first);
}

TEST_CASE("run config validation") {
  const GaussianState mu0{Vector::Zero(2), Matrix::Identity(2, 2)};
  const auto target = gaussian_target(mu0.mean, mu0.covariance);
  auto run = exact_run(mu0, 10);
  run.step.alpha = 0.4;
  CHECK_THROWS_AS(run_wgd(initial_cloud(mu0, 10, 1), *target, run), std::invalid_argument);
  ParticleCloud bad{RowMatrix::Constant(2, 2, std::nan(""))};
  CHECK_THROWS(bad.validate());
}
