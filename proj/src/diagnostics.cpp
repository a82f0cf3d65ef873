#include "wgd/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "wgd/linalg.hpp"
#include "wgd/random.hpp"

namespace wgd {
namespace {

constexpr int kGridPoints = 256;

std::vector<double> column(const RowMatrix& cloud, Eigen::Index j) {
  std::vector<double> v(cloud.rows());
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) v[i] = cloud(i, j);
  return v;
}

double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

}  // namespace

double w2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("w2_1d: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // Integrate (Qa(u) - Qb(u))^2 over the merged breakpoints i/n and j/m.
  const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / n;
    const double next_b = static_cast<double>(j + 1) / m;
    const double next = std::min(next_a, next_b);
    const double diff = a[i] - b[j];
    total += (next - u) * diff * diff;
    u = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return std::sqrt(total);
}

double sliced_w2(const RowMatrix& a, const RowMatrix& b, const SlicedW2Config& config) {
  if (a.rows() < 1 || b.rows() < 1) throw std::invalid_argument("sliced_w2: empty cloud");
  if (a.cols() != b.cols()) throw std::invalid_argument("sliced_w2: clouds differ in dimension");
  if (config.projections < 1) throw std::invalid_argument("sliced_w2: projections must be >= 1");
  const Eigen::Index d = a.cols();
  Philox rng(config.seed, 0x736c6963ull);
  std::vector<Vector> dirs(config.projections);
  for (auto& u : dirs) {
    do u = standard_normal_vector(rng, d);
    while (!(u.norm() > 0.0));
    u.normalize();
  }
  std::vector<double> per(config.projections);
#pragma omp parallel for schedule(static)
  for (int s = 0; s < config.projections; ++s) {
    const Vector pa = a * dirs[s];
    const Vector pb = b * dirs[s];
    per[s] = w2_1d(std::vector<double>(pa.data(), pa.data() + pa.size()),
                   std::vector<double>(pb.data(), pb.data() + pb.size()));
  }
  double total = 0.0;
  for (double v : per) total += v;
  return total / static_cast<double>(config.projections);
}

MomentReport moment_test(const RowMatrix& cloud, const Vector& mean_ref, const Matrix& cov_ref,
                         double tol_mean, double tol_cov) {
  if (cloud.rows() < 1) throw std::invalid_argument("moment_test: empty cloud");
  if (mean_ref.size() != cloud.cols() || cov_ref.rows() != cloud.cols() || cov_ref.cols() != cloud.cols())
    throw std::invalid_argument("moment_test: reference shapes do not match the cloud");
  MomentReport r;
  r.mean = linalg::row_mean(cloud);
  r.covariance = linalg::row_covariance(cloud, r.mean);
  r.mean_error = (r.mean - mean_ref).cwiseAbs().maxCoeff();
  r.cov_rel_error = (r.covariance - cov_ref).norm() / cov_ref.norm();
  r.mean_ok = r.mean_error <= tol_mean;
  r.cov_ok = r.cov_rel_error <= tol_cov;
  return r;
}

ModeReport mode_masses(const RowMatrix& cloud, const std::vector<Vector>& centers) {
  if (centers.empty()) throw std::invalid_argument("mode_masses: need at least one center");
  if (cloud.rows() < 1) throw std::invalid_argument("mode_masses: empty cloud");
  for (const auto& c : centers)
    if (c.size() != cloud.cols()) throw std::invalid_argument("mode_masses: center dimension mismatch");
  const std::size_t k = centers.size();
  std::vector<std::size_t> owner(cloud.rows());
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dist = (cloud.row(i).transpose() - centers[c]).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    owner[i] = best;
  }
  ModeReport r;
  r.counts.assign(k, 0);
  std::vector<Vector> sums(k, Vector::Zero(cloud.cols()));
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    ++r.counts[owner[i]];
    sums[owner[i]] += cloud.row(i).transpose();
  }
  for (std::size_t c = 0; c < k; ++c) {
    r.fractions.push_back(static_cast<double>(r.counts[c]) / static_cast<double>(cloud.rows()));
    r.displacements.push_back(r.counts[c] > 0
                                  ? (sums[c] / static_cast<double>(r.counts[c]) - centers[c]).norm()
                                  : std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

ScoreErrorStats score_error_stats(const RowMatrix& cloud, const VectorField& score,
                                  const VectorField& true_score, const VectorField& target_score) {
  const Eigen::Index n = cloud.rows(), d = cloud.cols();
  if (n < 1) throw std::invalid_argument("score_error_stats: empty cloud");
  std::vector<double> xi_sq(n), g_sq(n), inner(n);
#pragma omp parallel
  {
    Vector s(d), t(d), p(d);
#pragma omp for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
      const ConstPoint x = row_span(cloud, i);
      score(x, Point(s.data(), d));
      true_score(x, Point(t.data(), d));
      target_score(x, Point(p.data(), d));
      const Vector xi = s - t;
      const Vector g = t - p;
      xi_sq[i] = xi.squaredNorm();
      g_sq[i] = g.squaredNorm();
      inner[i] = g.dot(g + xi);
    }
  }
  ScoreErrorStats r;
  double sum_xi = 0.0, sum_g = 0.0, sum_inner = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    sum_xi += xi_sq[i];
    sum_g += g_sq[i];
    sum_inner += inner[i];
    r.max_norm = std::max(r.max_norm, std::sqrt(xi_sq[i]));
  }
  const double dn = static_cast<double>(n);
  r.mean_sq = sum_xi / dn;
  r.grad_norm = std::sqrt(sum_g / dn);
  r.direction = r.grad_norm > 0.0 ? (sum_inner / dn) / r.grad_norm : 0.0;
  return r;
}

double silverman_bandwidth(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (n - 1.0));
  std::vector<double> s = values;
  std::sort(s.begin(), s.end());
  const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(n, -0.2);
}

std::vector<double> kde_on_grid(const std::vector<double>& values, double bandwidth,
                                const std::vector<double>& grid) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kde: bandwidth must be > 0");
  if (values.empty()) throw std::invalid_argument("kde: empty sample");
  const double norm = 1.0 / (static_cast<double>(values.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out(grid.size());
  const auto g = static_cast<long>(grid.size());
#pragma omp parallel for schedule(static)
  for (long k = 0; k < g; ++k) {
    double acc = 0.0;
    for (double v : values) {
      const double u = (grid[k] - v) / bandwidth;
      acc += std::exp(-0.5 * u * u);
    }
    out[k] = acc * norm;
  }
  return out;
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("trapezoid: size mismatch");
  double total = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) total += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return total;
}

KdeTable kde_marginal(const RowMatrix& cloud, Eigen::Index coordinate, std::optional<double> bandwidth) {
  if (coordinate < 0 || coordinate >= cloud.cols())
    throw std::invalid_argument("kde_marginal: coordinate out of range");
  if (cloud.rows() < 1) throw std::invalid_argument("kde_marginal: empty cloud");
  if (bandwidth && !(*bandwidth > 0.0)) throw std::invalid_argument("kde_marginal: bandwidth must be > 0");
  const std::vector<double> values = column(cloud, coordinate);
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;

  KdeTable t;
  t.grid.resize(kGridPoints);
  if (hi == lo) {
    // All mass at one point: a unit-area spike on the grid point equal to it.
    constexpr int centre = kGridPoints / 2 - 1;
    const double step = 1.0 / (kGridPoints - 1);
    for (int k = 0; k < kGridPoints; ++k) t.grid[k] = lo + (k - centre) * step;
    t.density.assign(kGridPoints, 0.0);
    t.density[centre] = 1.0 / step;
    t.degenerate = true;
    t.warning = "coordinate " + std::to_string(coordinate) + " has zero variance; emitting a single spike";
    return t;
  }
  t.bandwidth = bandwidth ? *bandwidth : silverman_bandwidth(values);
  if (!(t.bandwidth > 0.0)) t.bandwidth = (hi - lo) / 10.0;
  const double a = lo - 3.0 * t.bandwidth, b = hi + 3.0 * t.bandwidth;
  for (int k = 0; k < kGridPoints; ++k) t.grid[k] = a + (b - a) * k / (kGridPoints - 1);
  t.density = kde_on_grid(values, t.bandwidth, t.grid);
  return t;
}

double kde_l1_distance(const RowMatrix& a, const RowMatrix& b, Eigen::Index coordinate) {
  if (a.cols() != b.cols()) throw std::invalid_argument("kde_l1_distance: dimension mismatch");
  if (coordinate < 0 || coordinate >= a.cols()) throw std::invalid_argument("kde_l1_distance: coordinate out of range");
  const std::vector<double> va = column(a, coordinate), vb = column(b, coordinate);
  const double ha = silverman_bandwidth(va), hb = silverman_bandwidth(vb);
  if (!(ha > 0.0) || !(hb > 0.0)) throw std::invalid_argument("kde_l1_distance: degenerate coordinate");
  const auto [a_lo, a_hi] = std::minmax_element(va.begin(), va.end());
  const auto [b_lo, b_hi] = std::minmax_element(vb.begin(), vb.end());
  const double lo = std::min(*a_lo - 3.0 * ha, *b_lo - 3.0 * hb);
  const double hi = std::max(*a_hi + 3.0 * ha, *b_hi + 3.0 * hb);
  std::vector<double> grid(kGridPoints);
  for (int k = 0; k < kGridPoints; ++k) grid[k] = lo + (hi - lo) * k / (kGridPoints - 1);
  const auto da = kde_on_grid(va, ha, grid), db = kde_on_grid(vb, hb, grid);
  std::vector<double> diff(kGridPoints);
  for (int k = 0; k < kGridPoints; ++k) diff[k] = std::abs(da[k] - db[k]);
  return trapezoid(grid, diff);
}

}  // namespace wgd
