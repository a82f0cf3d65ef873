#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace wgd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Row-major storage so that each particle is a contiguous row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ConstPoint = std::span<const double>;
using Point = std::span<double>;

/// A vector field R^d -> R^d written into `out` (same length as `x`).
using VectorField = std::function<void(ConstPoint x, Point out)>;

inline Eigen::Map<const Vector> as_vector(ConstPoint p) {
  return {p.data(), static_cast<Eigen::Index>(p.size())};
}
inline Eigen::Map<Vector> as_vector(Point p) {
  return {p.data(), static_cast<Eigen::Index>(p.size())};
}
inline ConstPoint row_span(const RowMatrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}
inline Point row_span(RowMatrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

// Error types. Invalid caller input is reported with std::invalid_argument.

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the particle engine when a coordinate leaves the guard box.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Raised when an oracle step size makes the pushforward map non-invertible.
class StepTooLargeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& message)
      : std::runtime_error(key + ": " + message), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace wgd
