#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wgd/common.hpp"
#include "wgd/random.hpp"

namespace wgd {

/// Regularity constants of a potential V = -log(pi).
///
/// alpha/beta: strong convexity and smoothness moduli (alpha I <= Hess V <= beta I).
/// c1/c2: linear growth of the score, |grad V(x)| <= c1 |x| + c2.
struct RegularityParams {
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> c1;
  std::optional<double> c2;

  /// Throws std::invalid_argument on negative values or alpha > beta.
  void validate() const;
};

/// Mean and covariance of a Gaussian law.
struct GaussianState {
  Vector mean;
  Matrix covariance;

  Eigen::Index dim() const { return mean.size(); }
  /// Throws unless the covariance is SPD and shapes agree.
  void validate() const;
};

/// Target distribution pi ∝ exp(-V). Implementations are immutable and
/// their evaluation methods are safe to call concurrently.
class Target {
 public:
  virtual ~Target() = default;

  virtual std::string name() const = 0;
  virtual Eigen::Index dim() const = 0;

  /// -V(x) up to an additive constant.
  virtual double log_density(ConstPoint x) const = 0;

  /// grad log pi(x) written into `out`.
  virtual void score(ConstPoint x, Point out) const = 0;

  virtual std::optional<RegularityParams> regularity() const { return std::nullopt; }

  /// Exact samples, when the law admits a direct sampler.
  virtual bool has_reference_sampler() const { return false; }
  virtual RowMatrix sample(Eigen::Index n, std::uint64_t seed) const;

  /// Closed-form Gaussian parameters when the target is Gaussian.
  virtual std::optional<GaussianState> gaussian() const { return std::nullopt; }

  Vector score(const Vector& x) const;
  /// Row-wise score of a cloud (parallel over rows).
  RowMatrix score_rows(const RowMatrix& x) const;
  VectorField score_field() const;
};

using TargetPtr = std::shared_ptr<const Target>;

TargetPtr gaussian_target(const Vector& mean, const Matrix& covariance);

/// pi(x) = f(phi_b(x)) with f = N(0, diag(100, 1, ..., 1)) and
/// phi_b(x) = (x1, x2 + b x1^2 - 100 b, x3, ..., xd).
TargetPtr banana_target(Eigen::Index dim, double b);

/// phi_b applied row-wise.
RowMatrix banana_forward(const RowMatrix& x, double b);

/// Equal-weight mixture of four Gaussians.
TargetPtr eggbox_target(const std::vector<Vector>& means, const std::vector<Matrix>& covariances);

/// Means at (±s, ±s, 0, ...) in the order (+,+), (-,+), (-,-), (+,-).
std::vector<Vector> default_eggbox_means(Eigen::Index dim, double spread = 5.0);

/// Unit variances with correlation +rho / -rho alternating between the first
/// two coordinates; identity on the rest.
std::vector<Matrix> default_eggbox_covariances(Eigen::Index dim, double correlation = 0.5);

struct LogisticRegressionData {
  Matrix x;   ///< n x dim design matrix
  Vector y;   ///< labels in {0, 1}
  double sigma0_sq = 100.0;

  void validate() const;
};

TargetPtr logistic_regression_target(LogisticRegressionData data);

/// Reads a CSV with a header row, numeric feature columns and a final {0,1}
/// label column. Features are optionally standardised (population std) and a
/// column of ones is appended afterwards.
LogisticRegressionData load_regression_csv(const std::string& path, bool standardize,
                                           double sigma0_sq);

/// X rows iid N(0, I), y_i ~ Bernoulli(sigmoid(x_i . theta)).
LogisticRegressionData synth_regression_data(Eigen::Index n, const Vector& true_theta,
                                             std::uint64_t seed, double sigma0_sq = 100.0);

/// Maximiser of log pi by gradient ascent with a fixed step (used to centre
/// the initial particle cloud for regression targets).
Vector find_mode(const Target& target, const Vector& start, int iters, double step);

}  // namespace wgd
