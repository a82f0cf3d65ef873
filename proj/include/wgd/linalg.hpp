#pragma once

#include "wgd/common.hpp"

namespace wgd::linalg {

bool is_symmetric(const Matrix& a, double tol = 1e-10);

/// True when `a` is symmetric and its Cholesky factorisation succeeds.
bool is_spd(const Matrix& a);

/// Throws std::invalid_argument naming `what` unless `a` is SPD.
void require_spd(const Matrix& a, const std::string& what);

struct SymmetricSqrt {
  Matrix root;
  double condition = 1.0;
};

/// Principal square root of a symmetric PSD matrix via eigendecomposition of
/// its symmetrised part. Tiny negative eigenvalues from round-off are clamped
/// to zero; genuinely negative spectra raise NumericalError.
SymmetricSqrt symmetric_sqrt(const Matrix& a);

/// Extreme eigenvalues of a symmetric matrix.
std::pair<double, double> eigen_range(const Matrix& a);

/// lambda_max(X^T X) by power iteration.
double spectral_norm_squared(const Matrix& x, int max_iters = 50, double tol = 1e-8);

double log_det_spd(const Matrix& a);

/// Empirical mean of the rows.
Vector row_mean(const RowMatrix& x);

/// Population (1/N) covariance of the rows.
Matrix row_covariance(const RowMatrix& x, const Vector& mean);

}  // namespace wgd::linalg
