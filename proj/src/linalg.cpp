#include "wgd/linalg.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace wgd::linalg {

bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

bool is_spd(const Matrix& a) {
  if (a.size() == 0 || !a.allFinite() || !is_symmetric(a)) return false;
  Eigen::LLT<Matrix> llt(a);
  return llt.info() == Eigen::Success;
}

void require_spd(const Matrix& a, const std::string& what) {
  if (!is_spd(a)) throw std::invalid_argument(what + " must be symmetric positive definite");
}

std::pair<double, double> eigen_range(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

SymmetricSqrt symmetric_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("symmetric_sqrt: eigendecomposition failed");
  Vector ev = es.eigenvalues();
  const double top = std::max(ev.maxCoeff(), 0.0);
  const double floor = -1e-10 * std::max(top, 1.0);
  if (ev.minCoeff() < floor) {
    std::ostringstream msg;
    msg << "symmetric_sqrt: matrix is not positive semidefinite (min eigenvalue " << ev.minCoeff()
        << ")";
    throw NumericalError(msg.str());
  }
  ev = ev.cwiseMax(0.0);
  SymmetricSqrt out;
  out.condition = ev.minCoeff() > 0 ? top / ev.minCoeff() : std::numeric_limits<double>::infinity();
  out.root = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  return out;
}

double spectral_norm_squared(const Matrix& x, int max_iters, double tol) {
  if (x.size() == 0) return 0.0;
  Vector v = Vector::Ones(x.cols()) / std::sqrt(static_cast<double>(x.cols()));
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector w = x.transpose() * (x * v);
    const double norm = w.norm();
    if (norm == 0.0) {
      // v is in the null space; restart from a different direction once.
      if (it == 0 && x.cols() > 1) {
        v = Vector::Zero(x.cols());
        v[0] = 1.0;
        continue;
      }
      return 0.0;
    }
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) return next;
    lambda = next;
  }
  return lambda;
}

double log_det_spd(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError("log_det_spd: matrix is not SPD");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

Vector row_mean(const RowMatrix& x) {
  Vector m = Vector::Zero(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) m += x.row(i).transpose();
  return m / static_cast<double>(x.rows());
}

Matrix row_covariance(const RowMatrix& x, const Vector& mean) {
  const Eigen::Index d = x.cols();
  Matrix c = Matrix::Zero(d, d);
  Vector diff(d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    diff = x.row(i).transpose() - mean;
    c.selfadjointView<Eigen::Lower>().rankUpdate(diff);
  }
  c = c.selfadjointView<Eigen::Lower>();
  return c / static_cast<double>(x.rows());
}

}  // namespace wgd::linalg
