#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <random>

#include "wgd/common.hpp"

namespace wgd {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// The key is the 64-bit seed and the 128-bit counter is split into a 64-bit
/// stream id and a 64-bit block index, so independent streams can be derived
/// from one seed without sharing state. Satisfies UniformRandomBitGenerator.
class Philox {
 public:
  using result_type = std::uint64_t;

  explicit Philox(std::uint64_t seed, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Raw block for counter (stream, index); exposed for tests.
  static std::array<std::uint32_t, 4> block(std::uint64_t seed, std::uint64_t stream,
                                            std::uint64_t index);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
};

/// Mixes several identifiers into a child seed (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

inline double standard_normal(Philox& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

/// Fills a vector with iid N(0, 1).
Vector standard_normal_vector(Philox& rng, Eigen::Index n);

/// n x d matrix of iid N(0, 1).
RowMatrix standard_normal_matrix(Philox& rng, Eigen::Index n, Eigen::Index d);

/// Draws n rows from N(mean, L L^T) given the lower Cholesky factor.
RowMatrix gaussian_rows(Philox& rng, Eigen::Index n, const Vector& mean, const Matrix& chol_lower);

}  // namespace wgd
