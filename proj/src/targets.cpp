#include "wgd/targets.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "wgd/linalg.hpp"

namespace wgd {

void RegularityParams::validate() const {
  for (const auto* v : {&alpha, &beta, &c1, &c2}) {
    if (*v && !(**v >= 0.0)) throw std::invalid_argument("regularity constants must be nonnegative");
  }
  if (alpha && beta && *alpha > *beta) throw std::invalid_argument("regularity requires alpha <= beta");
}

void GaussianState::validate() const {
  if (mean.size() == 0) throw std::invalid_argument("gaussian state: dimension must be >= 1");
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
    throw std::invalid_argument("gaussian state: covariance shape does not match mean");
  linalg::require_spd(covariance, "gaussian state covariance");
}

RowMatrix Target::sample(Eigen::Index, std::uint64_t) const {
  throw std::logic_error(name() + " target has no reference sampler");
}

Vector Target::score(const Vector& x) const {
  Vector out(x.size());
  score(ConstPoint(x.data(), x.size()), Point(out.data(), out.size()));
  return out;
}

RowMatrix Target::score_rows(const RowMatrix& x) const {
  RowMatrix out(x.rows(), x.cols());
  const Eigen::Index n = x.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) score(row_span(x, i), row_span(out, i));
  return out;
}

VectorField Target::score_field() const {
  return [this](ConstPoint x, Point out) { score(x, out); };
}

namespace {

double log_sum_exp(std::span<const double> v) {
  double top = -std::numeric_limits<double>::infinity();
  for (double a : v) top = std::max(top, a);
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double a : v) s += std::exp(a - top);
  return top + std::log(s);
}

/// Softplus log(1 + e^t) without overflow.
double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

class GaussianTarget final : public Target {
 public:
  GaussianTarget(Vector mean, Matrix cov) : state_{std::move(mean), std::move(cov)} {
    state_.validate();
    precision_ = state_.covariance.llt().solve(Matrix::Identity(dim(), dim()));
    precision_ = 0.5 * (precision_ + precision_.transpose());
    chol_ = state_.covariance.llt().matrixL();
    auto [lo, hi] = linalg::eigen_range(state_.covariance);
    reg_.alpha = 1.0 / hi;
    reg_.beta = 1.0 / lo;
    reg_.c1 = 1.0 / lo;
    reg_.c2 = (precision_ * state_.mean).norm();
  }

  std::string name() const override { return "gaussian"; }
  Eigen::Index dim() const override { return state_.mean.size(); }

  double log_density(ConstPoint x) const override {
    const Vector diff = as_vector(x) - state_.mean;
    return -0.5 * diff.dot(precision_ * diff);
  }

  void score(ConstPoint x, Point out) const override {
    as_vector(out).noalias() = -precision_ * (as_vector(x) - state_.mean);
  }

  std::optional<RegularityParams> regularity() const override { return reg_; }
  bool has_reference_sampler() const override { return true; }
  RowMatrix sample(Eigen::Index n, std::uint64_t seed) const override {
    Philox rng(seed, 0x6761757373ull);
    return gaussian_rows(rng, n, state_.mean, chol_);
  }
  std::optional<GaussianState> gaussian() const override { return state_; }

 private:
  GaussianState state_;
  Matrix precision_;
  Matrix chol_;
  RegularityParams reg_;
};

class BananaTarget final : public Target {
 public:
  BananaTarget(Eigen::Index dim, double b) : dim_(dim), b_(b) {}

  std::string name() const override { return "banana"; }
  Eigen::Index dim() const override { return dim_; }

  double log_density(ConstPoint x) const override {
    const double z2 = x[1] + b_ * x[0] * x[0] - 100.0 * b_;
    double acc = x[0] * x[0] / 100.0 + z2 * z2;
    for (Eigen::Index i = 2; i < dim_; ++i) acc += x[i] * x[i];
    return -0.5 * acc;
  }

  void score(ConstPoint x, Point out) const override {
    const double z2 = x[1] + b_ * x[0] * x[0] - 100.0 * b_;
    out[0] = -x[0] / 100.0 - 2.0 * b_ * x[0] * z2;
    out[1] = -z2;
    for (Eigen::Index i = 2; i < dim_; ++i) out[i] = -x[i];
  }

  bool has_reference_sampler() const override { return true; }
  RowMatrix sample(Eigen::Index n, std::uint64_t seed) const override {
    Philox rng(seed, 0x62616e616e61ull);
    RowMatrix z = standard_normal_matrix(rng, n, dim_);
    z.col(0) *= 10.0;
    for (Eigen::Index i = 0; i < n; ++i) z(i, 1) = z(i, 1) - b_ * z(i, 0) * z(i, 0) + 100.0 * b_;
    return z;
  }

 private:
  Eigen::Index dim_;
  double b_;
};

class EggboxTarget final : public Target {
 public:
  EggboxTarget(std::vector<Vector> means, std::vector<Matrix> covs) : means_(std::move(means)) {
    const double log_weight = std::log(0.25);
    for (std::size_t k = 0; k < means_.size(); ++k) {
      GaussianState{means_[k], covs[k]}.validate();
      Eigen::LLT<Matrix> llt(covs[k]);
      Matrix prec = llt.solve(Matrix::Identity(dim(), dim()));
      precisions_.push_back(0.5 * (prec + prec.transpose()));
      chols_.push_back(llt.matrixL());
      log_norm_.push_back(log_weight - 0.5 * linalg::log_det_spd(covs[k]) -
                          0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi));
    }
  }

  std::string name() const override { return "eggbox"; }
  Eigen::Index dim() const override { return means_.front().size(); }

  double log_density(ConstPoint x) const override {
    std::array<double, 4> terms{};
    component_logs(x, terms);
    return log_sum_exp(terms);
  }

  void score(ConstPoint x, Point out) const override {
    std::array<double, 4> terms{};
    component_logs(x, terms);
    const double total = log_sum_exp(terms);
    auto o = as_vector(out);
    o.setZero();
    const auto xv = as_vector(x);
    for (std::size_t k = 0; k < 4; ++k) {
      const double w = std::exp(terms[k] - total);
      o.noalias() -= w * (precisions_[k] * (xv - means_[k]));
    }
  }

  bool has_reference_sampler() const override { return true; }
  RowMatrix sample(Eigen::Index n, std::uint64_t seed) const override {
    Philox rng(seed, 0x656767626f78ull);
    std::uniform_int_distribution<int> pick(0, 3);
    RowMatrix out(n, dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const int k = pick(rng);
      const Vector z = standard_normal_vector(rng, dim());
      out.row(i) = (means_[k] + chols_[k] * z).transpose();
    }
    return out;
  }

 private:
  void component_logs(ConstPoint x, std::array<double, 4>& terms) const {
    const auto xv = as_vector(x);
    for (std::size_t k = 0; k < 4; ++k) {
      const Vector diff = xv - means_[k];
      terms[k] = log_norm_[k] - 0.5 * diff.dot(precisions_[k] * diff);
    }
  }

  std::vector<Vector> means_;
  std::vector<Matrix> precisions_;
  std::vector<Matrix> chols_;
  std::vector<double> log_norm_;
};

class LogisticRegressionTarget final : public Target {
 public:
  explicit LogisticRegressionTarget(LogisticRegressionData data) : data_(std::move(data)) {
    data_.validate();
    const double prior_prec = 1.0 / data_.sigma0_sq;
    reg_.alpha = prior_prec;
    reg_.beta = linalg::spectral_norm_squared(data_.x) / 4.0 + prior_prec;
    reg_.c1 = *reg_.beta;
    // |sum_i (sigmoid - y_i) x_i| <= sum_i |x_i|
    reg_.c2 = data_.x.rowwise().norm().sum();
  }

  std::string name() const override { return "logistic-regression"; }
  Eigen::Index dim() const override { return data_.x.cols(); }

  double log_density(ConstPoint theta) const override {
    const auto t = as_vector(theta);
    double v = 0.0;
    for (Eigen::Index i = 0; i < data_.x.rows(); ++i) {
      const double eta = data_.x.row(i).dot(t);
      v += softplus(eta) - data_.y[i] * eta;
    }
    v += 0.5 * t.squaredNorm() / data_.sigma0_sq;
    return -v;
  }

  void score(ConstPoint theta, Point out) const override {
    const auto t = as_vector(theta);
    auto o = as_vector(out);
    o = -t / data_.sigma0_sq;
    for (Eigen::Index i = 0; i < data_.x.rows(); ++i) {
      const double r = data_.y[i] - sigmoid(data_.x.row(i).dot(t));
      o.noalias() += r * data_.x.row(i).transpose();
    }
  }

  std::optional<RegularityParams> regularity() const override { return reg_; }

 private:
  LogisticRegressionData data_;
  RegularityParams reg_;
};

}  // namespace

TargetPtr gaussian_target(const Vector& mean, const Matrix& covariance) {
  return std::make_shared<GaussianTarget>(mean, covariance);
}

TargetPtr banana_target(Eigen::Index dim, double b) {
  if (dim < 2) throw std::invalid_argument("banana target requires dim >= 2");
  if (!(b > 0.0)) throw std::invalid_argument("banana target requires b > 0");
  return std::make_shared<BananaTarget>(dim, b);
}

RowMatrix banana_forward(const RowMatrix& x, double b) {
  RowMatrix z = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) z(i, 1) = x(i, 1) + b * x(i, 0) * x(i, 0) - 100.0 * b;
  return z;
}

TargetPtr eggbox_target(const std::vector<Vector>& means, const std::vector<Matrix>& covariances) {
  if (means.size() != 4 || covariances.size() != 4)
    throw std::invalid_argument("eggbox target requires exactly 4 components");
  for (const auto& m : means)
    if (m.size() != means.front().size() || m.size() == 0)
      throw std::invalid_argument("eggbox component means must share a dimension >= 1");
  return std::make_shared<EggboxTarget>(means, covariances);
}

std::vector<Vector> default_eggbox_means(Eigen::Index dim, double spread) {
  if (dim < 2) throw std::invalid_argument("eggbox defaults require dim >= 2");
  const double signs[4][2] = {{1, 1}, {-1, 1}, {-1, -1}, {1, -1}};
  std::vector<Vector> out;
  for (const auto& s : signs) {
    Vector m = Vector::Zero(dim);
    m[0] = s[0] * spread;
    m[1] = s[1] * spread;
    out.push_back(m);
  }
  return out;
}

std::vector<Matrix> default_eggbox_covariances(Eigen::Index dim, double correlation) {
  std::vector<Matrix> out;
  for (int k = 0; k < 4; ++k) {
    Matrix c = Matrix::Identity(dim, dim);
    const double rho = (k % 2 == 0) ? correlation : -correlation;
    c(0, 1) = c(1, 0) = rho;
    out.push_back(c);
  }
  return out;
}

void LogisticRegressionData::validate() const {
  if (x.rows() < 1 || x.cols() < 1) throw std::invalid_argument("regression data: need n >= 1 and dim >= 1");
  if (y.size() != x.rows()) throw std::invalid_argument("regression data: label count does not match rows");
  if (!x.allFinite()) throw std::invalid_argument("regression data: design matrix has non-finite entries");
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] != 0.0 && y[i] != 1.0) throw std::invalid_argument("regression data: labels must be 0 or 1");
  if (!(sigma0_sq > 0.0)) throw std::invalid_argument("regression data: sigma0_sq must be positive");
}

TargetPtr logistic_regression_target(LogisticRegressionData data) {
  return std::make_shared<LogisticRegressionTarget>(std::move(data));
}

Vector find_mode(const Target& target, const Vector& start, int iters, double step) {
  Vector x = start;
  for (int i = 0; i < iters; ++i) x += step * target.score(x);
  return x;
}

}  // namespace wgd
