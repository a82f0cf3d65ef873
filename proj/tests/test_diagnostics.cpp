#include <cmath>
#include <numbers>

#include "doctest.h"
#include "wgd/diagnostics.hpp"
#include "wgd/oracle.hpp"
#include "wgd/random.hpp"
#include "wgd/targets.hpp"

using namespace wgd;

namespace {

RowMatrix normal_cloud(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double sd = 1.0) {
  Philox rng(seed, 0);
  return sd * standard_normal_matrix(rng, n, d);
}

VectorField affine(double scale, Vector shift) {
  return [scale, shift](ConstPoint x, Point out) {
    as_vector(out) = scale * as_vector(x) + shift;
  };
}

}  // namespace

TEST_CASE("one-dimensional W2") {
  CHECK(w2_1d({0.0}, {2.5}) == doctest::Approx(2.5));
  CHECK(w2_1d({3.0, 1.0, 2.0}, {2.0, 3.0, 1.0}) == 0.0);
  // Unequal sizes: {0, 1} against {0.5} moves each half by 0.5.
  CHECK(w2_1d({0.0, 1.0}, {0.5}) == doctest::Approx(0.5));
}

TEST_CASE("sliced W2 properties") {
  const RowMatrix a = normal_cloud(2000, 3, 1);
  const RowMatrix b = normal_cloud(1500, 3, 2, 1.5);
  const SlicedW2Config cfg{64, 9};
  CHECK(sliced_w2(a, a, cfg) == 0.0);
  CHECK(sliced_w2(a, b, cfg) == doctest::Approx(sliced_w2(b, a, cfg)).epsilon(1e-12));

  RowMatrix shifted = a;
  const Eigen::RowVectorXd v = (Eigen::RowVectorXd(3) << 0.5, -1.0, 2.0).finished();
  shifted.rowwise() += v;
  const double base = sliced_w2(a, b, cfg);
  CHECK(std::abs(sliced_w2(shifted, b, cfg) - base) <= v.norm() + 1e-12);

  const RowMatrix p = RowMatrix::Zero(1, 1), q = RowMatrix::Constant(1, 1, -3.0);
  CHECK(sliced_w2(p, q, cfg) == doctest::Approx(3.0));
}

TEST_CASE("sliced W2 tracks the closed-form W2 over a variance sweep") {
  const GaussianState ref{Vector::Zero(2), Matrix::Identity(2, 2)};
  const RowMatrix base = normal_cloud(100000, 2, 3);
  double prev = -1.0;
  for (double var : {1.5, 2.0, 3.0, 4.0}) {
    const RowMatrix other = normal_cloud(100000, 2, 4, std::sqrt(var));
    const double sliced = sliced_w2(base, other, {128, 1});
    const double exact = oracle::w2_gaussian(ref, {Vector::Zero(2), var * Matrix::Identity(2, 2)});
    CHECK(sliced < exact);
    CHECK(sliced > prev);
    prev = sliced;
  }
}

TEST_CASE("moment test") {
  const Eigen::Index n = 10000;
  const RowMatrix x = normal_cloud(n, 2, 5);
  const double tol = 3.0 / std::sqrt(static_cast<double>(n));
  const auto ok = moment_test(x, Vector::Zero(2), Matrix::Identity(2, 2), tol, 10 * tol);
  CHECK(ok.passed());
  RowMatrix moved = x;
  moved.col(0).array() += 10 * tol;
  CHECK_FALSE(moment_test(moved, Vector::Zero(2), Matrix::Identity(2, 2), tol, 10 * tol).mean_ok);
}

TEST_CASE("banana pullback passes the moment test") {
  const double b = 0.01;
  const auto t = banana_target(2, b);
  const RowMatrix z = banana_forward(t->sample(20000, 3), b);
  const Matrix cov = Matrix((Vector(2) << 100.0, 1.0).finished().asDiagonal());
  CHECK(moment_test(z, Vector::Zero(2), cov, 0.5, 0.05).passed());
}

TEST_CASE("mode masses") {
  const std::vector<Vector> centers = default_eggbox_means(2);
  RowMatrix at_first(10, 2);
  at_first.rowwise() = centers[0].transpose();
  const auto r = mode_masses(at_first, centers);
  CHECK(r.fractions == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  CHECK(r.displacements[0] == 0.0);
  CHECK(std::isnan(r.displacements[1]));

  // The origin is equidistant from all four centers.
  const auto tie = mode_masses(RowMatrix::Zero(1, 2), centers);
  CHECK(tie.counts[0] == 1);

  const auto egg = eggbox_target(centers, default_eggbox_covariances(2));
  const Eigen::Index n = 20000;
  const auto mix = mode_masses(egg->sample(n, 4), centers);
  double total = 0.0;
  const double sigma = std::sqrt(0.25 * 0.75 / n);
  for (double f : mix.fractions) {
    CHECK(std::abs(f - 0.25) < 3 * sigma);
    total += f;
  }
  CHECK(total == 1.0);
}

TEST_CASE("score error statistics") {
  const RowMatrix x = normal_cloud(500, 2, 6) * 2.0;
  const auto true_score = affine(-0.25, Vector::Zero(2));
  const auto target = affine(-1.0, Vector::Zero(2));
  const auto exact = score_error_stats(x, true_score, true_score, target);
  CHECK(exact.mean_sq == 0.0);
  CHECK(exact.max_norm == 0.0);
  CHECK(exact.direction == doctest::Approx(exact.grad_norm));

  const Vector c = (Vector(2) << 0.3, -0.4).finished();
  const auto shifted = score_error_stats(x, affine(-0.25, c), true_score, target);
  CHECK(shifted.mean_sq == doctest::Approx(0.25));
  CHECK(shifted.max_norm == doctest::Approx(0.5));
}

TEST_CASE("kde marginal") {
  const RowMatrix x = normal_cloud(10000, 2, 7);
  const auto kde = kde_marginal(x, 0);
  REQUIRE(kde.grid.size() == 256);
  CHECK(trapezoid(kde.grid, kde.density) == doctest::Approx(1.0).epsilon(1e-3));
  std::vector<double> first(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) first[i] = x(i, 0);
  const auto at0 = kde_on_grid(first, kde.bandwidth, {0.0});
  CHECK(at0[0] == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(0.1));

  const RowMatrix y = normal_cloud(10000, 2, 8);
  CHECK(kde_l1_distance(x, y, 1) < 0.1);

  const auto spike = kde_marginal(RowMatrix::Constant(20, 1, 2.0), 0);
  CHECK(spike.degenerate);
  CHECK_FALSE(spike.warning.empty());
  CHECK(trapezoid(spike.grid, spike.density) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK_THROWS_AS(kde_marginal(x, 5), std::invalid_argument);
}
