#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wgd/common.hpp"
#include "wgd/engine.hpp"

namespace wgd {

struct SlicedW2Config {
  int projections = 128;
  std::uint64_t seed = 0;
};

/// Mean over random unit directions of the exact 1-D W2 between the
/// projected clouds (quantile coupling; sizes may differ).
double sliced_w2(const RowMatrix& a, const RowMatrix& b, const SlicedW2Config& config = {});

/// Exact W2 between two empirical 1-D laws.
double w2_1d(std::vector<double> a, std::vector<double> b);

struct MomentReport {
  Vector mean;
  Matrix covariance;
  double mean_error = 0.0;      ///< max per-coordinate |mean - mean_ref|
  double cov_rel_error = 0.0;   ///< |cov - cov_ref|_F / |cov_ref|_F
  bool mean_ok = false;
  bool cov_ok = false;
  bool passed() const { return mean_ok && cov_ok; }
};

MomentReport moment_test(const RowMatrix& cloud, const Vector& mean_ref, const Matrix& cov_ref,
                         double tol_mean, double tol_cov);

struct ModeReport {
  std::vector<double> fractions;
  std::vector<long> counts;
  /// |mean of assigned particles - center|; NaN for an empty mode.
  std::vector<double> displacements;
};

/// Nearest-center assignment; ties go to the lowest center index.
ModeReport mode_masses(const RowMatrix& cloud, const std::vector<Vector>& centers);

struct ScoreErrorStats {
  double mean_sq = 0.0;    ///< mean |xi|^2 over the cloud
  double max_norm = 0.0;   ///< max |xi|
  double direction = 0.0;  ///< <g, g + xi> / |g| with g the Wasserstein gradient
  double grad_norm = 0.0;  ///< |g| in L2 of the cloud
};

/// xi = score - true_score, with g = true_score - target_score.
ScoreErrorStats score_error_stats(const RowMatrix& cloud, const VectorField& score,
                                  const VectorField& true_score, const VectorField& target_score);

struct KdeTable {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
  bool degenerate = false;
  std::string warning;
};

/// Rule-of-thumb bandwidth 0.9 min(sd, IQR / 1.34) n^(-1/5).
double silverman_bandwidth(const std::vector<double>& values);

/// Gaussian KDE of one coordinate on a 256-point grid spanning the data
/// range +- 3 bandwidths. A zero-variance coordinate gives a single spike.
KdeTable kde_marginal(const RowMatrix& cloud, Eigen::Index coordinate,
                      std::optional<double> bandwidth = std::nullopt);

/// Evaluates the KDE of `values` at `grid`.
std::vector<double> kde_on_grid(const std::vector<double>& values, double bandwidth,
                                const std::vector<double>& grid);

/// Trapezoid integral of a table.
double trapezoid(const std::vector<double>& x, const std::vector<double>& y);

/// L1 distance between the Silverman KDEs of one coordinate of two clouds,
/// on a shared 256-point grid covering both.
double kde_l1_distance(const RowMatrix& a, const RowMatrix& b, Eigen::Index coordinate);

}  // namespace wgd
