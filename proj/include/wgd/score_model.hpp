#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "wgd/common.hpp"

namespace wgd {

/// One transformation y = x + V tanh(W^T x + b).
struct TanhBlock {
  Matrix v;
  Matrix w;
  Vector b;
};

/// Composition of tanh blocks, applied in order; s(x) = block_K(...block_1(x)).
/// The model output is the score estimate itself.
struct ScoreModel {
  Eigen::Index dim = 0;
  std::vector<TanhBlock> blocks;

  /// All parameters zero, so s(x) = x.
  static ScoreModel zeros(Eigen::Index dim, int blocks);
  /// V ~ N(0, 0.01/d), W ~ N(0, 1/d), b = 0.
  static ScoreModel random(Eigen::Index dim, int blocks, std::uint64_t seed);

  void validate() const;
  Eigen::Index parameter_count() const;
  /// Parameters in block order, each block as V, W (row-major), then b.
  Vector flatten() const;
  void assign(const Vector& params);
};

/// Gradient with the same layout as the model parameters.
struct ModelGradient {
  std::vector<TanhBlock> blocks;
  double loss = 0.0;

  double norm() const;
  void scale(double factor);
};

enum class Optimizer {
  sgd,    ///< plain SGD on resampled minibatches
  lbfgs,  ///< L-BFGS on one fixed batch drawn without replacement
};

struct TrainConfig {
  Optimizer optimizer = Optimizer::sgd;
  /// SGD steps, or the L-BFGS iteration cap.
  int steps = 200;
  int batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip = 10.0;

  void validate() const;
};

Vector eval_score(const ScoreModel& model, const Vector& x);
void eval_score(const ScoreModel& model, ConstPoint x, Point out);
RowMatrix eval_score_rows(const ScoreModel& model, const RowMatrix& x);

/// tr(grad_x s(x)) through the full chain-rule product of block Jacobians.
double jacobian_trace(const ScoreModel& model, const Vector& x);

/// Mean over rows of tr(grad s) + |s|^2 / 2.
double sm_loss(const ScoreModel& model, const RowMatrix& batch);

/// Exact gradient of sm_loss with respect to every V, W, b entry.
ModelGradient sm_grad(const ScoreModel& model, const RowMatrix& batch);

/// Same as sm_grad restricted to the listed rows of `cloud`.
ModelGradient sm_grad(const ScoreModel& model, const RowMatrix& cloud,
                      std::span<const Eigen::Index> rows);

struct FitResult {
  ScoreModel model;
  std::vector<double> losses;  ///< minibatch loss before each step
};

/// Minimises the score-matching objective, by default with plain SGD on
/// uniformly resampled minibatches (learning_rate and grad_clip apply to SGD
/// only). Warm-starts from `init` when given, otherwise from
/// ScoreModel::random(d, fresh_blocks, seed).
FitResult fit_score(const RowMatrix& cloud, const std::optional<ScoreModel>& init,
                    const TrainConfig& config, int fresh_blocks = 2);

/// Score model evaluated in standardised coordinates z = (x - shift) / scale.
/// The returned field is the score in x coordinates, s_z(z) / scale.
struct StandardizedScore {
  ScoreModel model;
  Vector shift;
  Vector scale;

  static StandardizedScore identity(ScoreModel model);
  /// Per-coordinate mean / population std of the cloud.
  static std::pair<Vector, Vector> cloud_moments(const RowMatrix& cloud);

  RowMatrix standardize(const RowMatrix& x) const;
  void eval(ConstPoint x, Point out) const;
  RowMatrix eval_rows(const RowMatrix& x) const;
};

/// Versioned text format: header line, "dim blocks", then V, W (row-major)
/// and b of each block.
void save_score_model(const ScoreModel& model, std::ostream& out);
ScoreModel load_score_model(std::istream& in);

}  // namespace wgd
