#include "wgd/score_model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <numeric>
#include <sstream>

#include <ceres/ceres.h>

#include "wgd/linalg.hpp"
#include "wgd/random.hpp"

namespace wgd {

ScoreModel ScoreModel::zeros(Eigen::Index dim, int blocks) {
  if (dim < 1 || blocks < 1) throw std::invalid_argument("score model needs dim >= 1 and >= 1 block");
  ScoreModel m;
  m.dim = dim;
  for (int k = 0; k < blocks; ++k)
    m.blocks.push_back({Matrix::Zero(dim, dim), Matrix::Zero(dim, dim), Vector::Zero(dim)});
  return m;
}

ScoreModel ScoreModel::random(Eigen::Index dim, int blocks, std::uint64_t seed) {
  ScoreModel m = zeros(dim, blocks);
  Philox rng(seed, 0x696e6974ull);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd_v = std::sqrt(0.01 / static_cast<double>(dim));
  const double sd_w = std::sqrt(1.0 / static_cast<double>(dim));
  for (auto& blk : m.blocks) {
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) blk.v(i, j) = sd_v * normal(rng);
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) blk.w(i, j) = sd_w * normal(rng);
  }
  return m;
}

void ScoreModel::validate() const {
  if (dim < 1) throw std::invalid_argument("score model: dim must be >= 1");
  if (blocks.empty()) throw std::invalid_argument("score model: needs at least one block");
  for (const auto& blk : blocks) {
    if (blk.v.rows() != dim || blk.v.cols() != dim || blk.w.rows() != dim || blk.w.cols() != dim ||
        blk.b.size() != dim)
      throw std::invalid_argument("score model: block shape does not match dim");
    if (!blk.v.allFinite() || !blk.w.allFinite() || !blk.b.allFinite())
      throw std::invalid_argument("score model: non-finite parameter");
  }
}

Eigen::Index ScoreModel::parameter_count() const {
  return static_cast<Eigen::Index>(blocks.size()) * (2 * dim * dim + dim);
}

Vector ScoreModel::flatten() const {
  Vector out(parameter_count());
  Eigen::Index pos = 0;
  for (const auto& blk : blocks) {
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) out[pos++] = blk.v(i, j);
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) out[pos++] = blk.w(i, j);
    for (Eigen::Index i = 0; i < dim; ++i) out[pos++] = blk.b[i];
  }
  return out;
}

void ScoreModel::assign(const Vector& params) {
  if (params.size() != parameter_count()) throw std::invalid_argument("score model: parameter count mismatch");
  Eigen::Index pos = 0;
  for (auto& blk : blocks) {
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) blk.v(i, j) = params[pos++];
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) blk.w(i, j) = params[pos++];
    for (Eigen::Index i = 0; i < dim; ++i) blk.b[i] = params[pos++];
  }
}

double ModelGradient::norm() const {
  double s = 0.0;
  for (const auto& blk : blocks) s += blk.v.squaredNorm() + blk.w.squaredNorm() + blk.b.squaredNorm();
  return std::sqrt(s);
}

void ModelGradient::scale(double factor) {
  for (auto& blk : blocks) {
    blk.v *= factor;
    blk.w *= factor;
    blk.b *= factor;
  }
}

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("train config: steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train config: learning_rate must be >= 0");
  if (grad_clip && !(*grad_clip > 0.0)) throw std::invalid_argument("train config: grad_clip must be positive");
}

namespace {

/// Per-thread scratch for one forward/backward pass.
struct Workspace {
  explicit Workspace(const ScoreModel& m) {
    const auto d = m.dim;
    const auto k = m.blocks.size();
    y.assign(k + 1, Vector(d));
    t.assign(k, Vector(d));
    dd.assign(k, Vector(d));
    if (k > 1) prefix.assign(k, Matrix(d, d));
    adj = Matrix(d, d);
    mm = Matrix(d, d);
    mw = Matrix(d, d);
    ybar = Vector(d);
    hbar = Vector(d);
    dbar = Vector(d);
  }
  std::vector<Vector> y;       // y_0 = x, ..., y_K = s(x)
  std::vector<Vector> t;       // tanh activations
  std::vector<Vector> dd;      // 1 - t^2
  std::vector<Matrix> prefix;  // P_k = J_k ... J_1, k = 0..K-1 (P_0 = I)
  Matrix adj, mm, mw;
  Vector ybar, hbar, dbar;
};

void forward(const ScoreModel& m, ConstPoint x, Workspace& ws) {
  ws.y[0] = as_vector(x);
  for (std::size_t k = 0; k < m.blocks.size(); ++k) {
    const auto& blk = m.blocks[k];
    ws.t[k].noalias() = blk.w.transpose() * ws.y[k];
    ws.t[k] += blk.b;
    ws.t[k] = ws.t[k].array().tanh();
    ws.dd[k] = 1.0 - ws.t[k].array().square();
    ws.y[k + 1] = ws.y[k];
    ws.y[k + 1].noalias() += blk.v * ws.t[k];
  }
}

/// Fills ws.prefix (needed when there is more than one block) and returns
/// tr(P_K).
double forward_trace(const ScoreModel& m, Workspace& ws) {
  const auto nb = m.blocks.size();
  if (nb == 1) {
    const auto& blk = m.blocks[0];
    return static_cast<double>(m.dim) +
           (blk.v.cwiseProduct(blk.w).colwise().sum().transpose().array() * ws.dd[0].array()).sum();
  }
  ws.prefix[0].setIdentity();
  Matrix next(m.dim, m.dim);
  for (std::size_t k = 0; k < nb; ++k) {
    const auto& blk = m.blocks[k];
    // P_{k+1} = P_k + V diag(D) W^T P_k
    ws.mw.noalias() = blk.w.transpose() * (k == 0 ? Matrix::Identity(m.dim, m.dim) : ws.prefix[k]);
    ws.mw = ws.dd[k].asDiagonal() * ws.mw;
    if (k + 1 < nb) {
      ws.prefix[k + 1] = ws.prefix[k];
      ws.prefix[k + 1].noalias() += blk.v * ws.mw;
    } else {
      return ws.prefix[k].trace() + (blk.v * ws.mw).trace();
    }
  }
  return 0.0;
}

/// Adds the gradient of tr(grad s) + |s|^2/2 at one point into `g`; returns
/// the point loss. Requires forward() and forward_trace() on the same point.
void backward(const ScoreModel& m, Workspace& ws, ModelGradient& g) {
  const auto nb = m.blocks.size();
  ws.ybar = ws.y[nb];
  bool adj_identity = true;
  for (std::size_t kk = nb; kk-- > 0;) {
    const auto& blk = m.blocks[kk];
    auto& gb = g.blocks[kk];
    const Vector& t = ws.t[kk];
    const Vector& dd = ws.dd[kk];

    // M = A P_{k-1}^T is the adjoint of this block's Jacobian.
    bool m_identity = false;
    if (kk == 0) {
      if (adj_identity) m_identity = true;
      else ws.mm = ws.adj;
    } else if (adj_identity) {
      ws.mm = ws.prefix[kk].transpose();
    } else {
      ws.mm.noalias() = ws.adj * ws.prefix[kk].transpose();
    }

    if (m_identity) ws.mw = blk.w;
    else ws.mw.noalias() = ws.mm * blk.w;

    gb.v.noalias() += ws.ybar * t.transpose();
    gb.v.noalias() += ws.mw * dd.asDiagonal();
    ws.dbar = blk.v.cwiseProduct(ws.mw).colwise().sum().transpose();

    ws.hbar.noalias() = blk.v.transpose() * ws.ybar;
    ws.hbar = dd.cwiseProduct(ws.hbar) - 2.0 * ws.dbar.cwiseProduct(t).cwiseProduct(dd);

    gb.w.noalias() += ws.y[kk] * ws.hbar.transpose();
    if (m_identity) gb.w.noalias() += blk.v * dd.asDiagonal();
    else gb.w.noalias() += ws.mm.transpose() * blk.v * dd.asDiagonal();
    gb.b += ws.hbar;

    if (kk > 0) {
      // A <- J_k^T A with J_k = I + V diag(D) W^T.
      if (adj_identity) {
        ws.adj = blk.w * dd.asDiagonal() * blk.v.transpose();
        ws.adj.diagonal().array() += 1.0;
        adj_identity = false;
      } else {
        Matrix tmp = blk.v.transpose() * ws.adj;
        ws.adj.noalias() += blk.w * dd.asDiagonal() * tmp;
      }
    }
    ws.ybar.noalias() += blk.w * ws.hbar;
  }
}

ModelGradient zero_gradient(const ScoreModel& m) {
  ModelGradient g;
  for (std::size_t k = 0; k < m.blocks.size(); ++k)
    g.blocks.push_back({Matrix::Zero(m.dim, m.dim), Matrix::Zero(m.dim, m.dim), Vector::Zero(m.dim)});
  return g;
}

void add_into(ModelGradient& acc, const ModelGradient& g) {
  for (std::size_t k = 0; k < acc.blocks.size(); ++k) {
    acc.blocks[k].v += g.blocks[k].v;
    acc.blocks[k].w += g.blocks[k].w;
    acc.blocks[k].b += g.blocks[k].b;
  }
  acc.loss += g.loss;
}

// Fixed-size chunks keep the floating-point reduction order independent of
// the number of threads.
constexpr Eigen::Index kChunk = 16;

ModelGradient gradient_over(const ScoreModel& model, const RowMatrix& cloud,
                            std::span<const Eigen::Index> rows) {
  if (rows.empty()) throw std::invalid_argument("sm_grad: empty batch");
  if (cloud.cols() != model.dim) throw std::invalid_argument("sm_grad: dimension mismatch");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index chunks = (n + kChunk - 1) / kChunk;
  std::vector<ModelGradient> partial(chunks, zero_gradient(model));
#pragma omp parallel
  {
    Workspace ws(model);
#pragma omp for schedule(static)
    for (Eigen::Index c = 0; c < chunks; ++c) {
      const Eigen::Index end = std::min(n, (c + 1) * kChunk);
      for (Eigen::Index i = c * kChunk; i < end; ++i) {
        forward(model, row_span(cloud, rows[i]), ws);
        const double tr = forward_trace(model, ws);
        partial[c].loss += tr + 0.5 * ws.y.back().squaredNorm();
        backward(model, ws, partial[c]);
      }
    }
  }
  ModelGradient total = zero_gradient(model);
  for (const auto& p : partial) add_into(total, p);
  total.scale(1.0 / static_cast<double>(n));
  total.loss /= static_cast<double>(n);
  return total;
}

}  // namespace

void eval_score(const ScoreModel& model, ConstPoint x, Point out) {
  Vector cur = as_vector(x);
  Vector act(model.dim);
  for (const auto& blk : model.blocks) {
    act.noalias() = blk.w.transpose() * cur;
    act = (act + blk.b).array().tanh();
    cur.noalias() += blk.v * act;
  }
  as_vector(out) = cur;
}

Vector eval_score(const ScoreModel& model, const Vector& x) {
  Vector out(x.size());
  eval_score(model, ConstPoint(x.data(), x.size()), Point(out.data(), out.size()));
  return out;
}

RowMatrix eval_score_rows(const ScoreModel& model, const RowMatrix& x) {
  RowMatrix out(x.rows(), x.cols());
  const Eigen::Index n = x.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) eval_score(model, row_span(x, i), row_span(out, i));
  return out;
}

double jacobian_trace(const ScoreModel& model, const Vector& x) {
  Workspace ws(model);
  forward(model, ConstPoint(x.data(), x.size()), ws);
  return forward_trace(model, ws);
}

double sm_loss(const ScoreModel& model, const RowMatrix& batch) {
  if (batch.rows() == 0) throw std::invalid_argument("sm_loss: empty batch");
  if (batch.cols() != model.dim) throw std::invalid_argument("sm_loss: dimension mismatch");
  const Eigen::Index n = batch.rows();
  std::vector<double> per(n);
#pragma omp parallel
  {
    Workspace ws(model);
#pragma omp for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
      forward(model, row_span(batch, i), ws);
      per[i] = forward_trace(model, ws) + 0.5 * ws.y.back().squaredNorm();
    }
  }
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(n);
}

ModelGradient sm_grad(const ScoreModel& model, const RowMatrix& cloud,
                      std::span<const Eigen::Index> rows) {
  return gradient_over(model, cloud, rows);
}

ModelGradient sm_grad(const ScoreModel& model, const RowMatrix& batch) {
  std::vector<Eigen::Index> rows(batch.rows());
  for (Eigen::Index i = 0; i < batch.rows(); ++i) rows[i] = i;
  return gradient_over(model, batch, rows);
}

namespace {

/// Score-matching loss on a fixed batch as a Ceres first-order problem.
class BatchObjective final : public ceres::FirstOrderFunction {
 public:
  BatchObjective(const RowMatrix& cloud, std::vector<Eigen::Index> rows, ScoreModel shape)
      : cloud_(cloud), rows_(std::move(rows)), model_(std::move(shape)) {}

  int NumParameters() const override { return static_cast<int>(model_.parameter_count()); }

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    model_.assign(Eigen::Map<const Vector>(parameters, model_.parameter_count()));
    const ModelGradient g = gradient_over(model_, cloud_, rows_);
    *cost = g.loss;
    if (gradient) {
      ScoreModel packed = model_;
      packed.blocks = g.blocks;
      Eigen::Map<Vector>(gradient, model_.parameter_count()) = packed.flatten();
    }
    return std::isfinite(g.loss) && std::isfinite(g.norm());
  }

 private:
  const RowMatrix& cloud_;
  std::vector<Eigen::Index> rows_;
  mutable ScoreModel model_;
};

FitResult fit_lbfgs(const RowMatrix& cloud, FitResult result, const TrainConfig& config) {
  // Ceres' line search warns through glog on flat steps; keep stderr clean.
  static std::once_flag quiet_glog;
  std::call_once(quiet_glog, [] { FLAGS_minloglevel = google::GLOG_ERROR; });
  std::vector<Eigen::Index> rows(cloud.rows());
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  if (config.batch_size < cloud.rows()) {
    Philox rng(config.seed, 0x6c626667ull);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(config.batch_size);
    std::sort(rows.begin(), rows.end());
  }
  Vector params = result.model.flatten();
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = config.steps;
  options.function_tolerance = 1e-12;
  options.gradient_tolerance = 1e-10;
  options.parameter_tolerance = 1e-12;
  options.logging_type = ceres::SILENT;
  ceres::GradientProblem problem(new BatchObjective(cloud, rows, result.model));
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, params.data(), &summary);
  if (!params.allFinite() || !std::isfinite(summary.final_cost)) {
    std::ostringstream msg;
    msg << "fit_score: non-finite loss at step " << summary.iterations.size() << " (" << summary.message << ")";
    throw NumericalError(msg.str());
  }
  for (const auto& it : summary.iterations) result.losses.push_back(it.cost);
  result.model.assign(params);
  return result;
}

}  // namespace

FitResult fit_score(const RowMatrix& cloud, const std::optional<ScoreModel>& init,
                    const TrainConfig& config, int fresh_blocks) {
  config.validate();
  FitResult result{init ? *init : ScoreModel::random(cloud.cols(), fresh_blocks, config.seed), {}};
  result.model.validate();
  if (result.model.dim != cloud.cols()) throw std::invalid_argument("fit_score: dimension mismatch");
  if (config.steps == 0) return result;
  if (cloud.rows() < config.batch_size)
    throw std::invalid_argument("fit_score: cloud has fewer particles than batch_size");

  if (config.optimizer == Optimizer::lbfgs) return fit_lbfgs(cloud, std::move(result), config);

  Philox rng(config.seed, 0x7367647374657073ull);
  std::uniform_int_distribution<Eigen::Index> pick(0, cloud.rows() - 1);
  std::vector<Eigen::Index> rows(config.batch_size);
  result.losses.reserve(config.steps);
  for (int step = 0; step < config.steps; ++step) {
    for (auto& r : rows) r = pick(rng);
    ModelGradient g = gradient_over(result.model, cloud, rows);
    if (!std::isfinite(g.loss) || !std::isfinite(g.norm())) {
      std::ostringstream msg;
      msg << "fit_score: non-finite loss at step " << step;
      throw NumericalError(msg.str());
    }
    result.losses.push_back(g.loss);
    double lr = config.learning_rate;
    if (config.grad_clip) {
      const double norm = g.norm();
      if (norm > *config.grad_clip) lr *= *config.grad_clip / norm;
    }
    for (std::size_t k = 0; k < result.model.blocks.size(); ++k) {
      result.model.blocks[k].v -= lr * g.blocks[k].v;
      result.model.blocks[k].w -= lr * g.blocks[k].w;
      result.model.blocks[k].b -= lr * g.blocks[k].b;
    }
  }
  return result;
}

StandardizedScore StandardizedScore::identity(ScoreModel model) {
  const auto d = model.dim;
  return {std::move(model), Vector::Zero(d), Vector::Ones(d)};
}

std::pair<Vector, Vector> StandardizedScore::cloud_moments(const RowMatrix& cloud) {
  Vector mean = linalg::row_mean(cloud);
  Vector var = Vector::Zero(cloud.cols());
  for (Eigen::Index i = 0; i < cloud.rows(); ++i)
    var += (cloud.row(i).transpose() - mean).array().square().matrix();
  var /= static_cast<double>(cloud.rows());
  Vector sd = var.cwiseSqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (!(sd[j] > 1e-12)) sd[j] = 1.0;
  return {mean, sd};
}

RowMatrix StandardizedScore::standardize(const RowMatrix& x) const {
  RowMatrix z = x;
  z.rowwise() -= shift.transpose();
  z.array().rowwise() /= scale.transpose().array();
  return z;
}

void StandardizedScore::eval(ConstPoint x, Point out) const {
  Vector z = (as_vector(x) - shift).cwiseQuotient(scale);
  eval_score(model, ConstPoint(z.data(), z.size()), out);
  as_vector(out).array() /= scale.array();
}

RowMatrix StandardizedScore::eval_rows(const RowMatrix& x) const {
  RowMatrix out(x.rows(), x.cols());
  const Eigen::Index n = x.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) eval(row_span(x, i), row_span(out, i));
  return out;
}

void save_score_model(const ScoreModel& model, std::ostream& out) {
  model.validate();
  out << "wgd-score-model 1\n" << model.dim << ' ' << model.blocks.size() << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  auto write_matrix = [&](const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
      out << '\n';
    }
  };
  for (const auto& blk : model.blocks) {
    write_matrix(blk.v);
    write_matrix(blk.w);
    write_matrix(blk.b.transpose());
  }
}

ScoreModel load_score_model(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "wgd-score-model")
    throw std::invalid_argument("score model: missing header");
  if (version != 1) throw std::invalid_argument("score model: unsupported version " + std::to_string(version));
  Eigen::Index dim = 0;
  int nblocks = 0;
  if (!(in >> dim >> nblocks) || dim < 1 || nblocks < 1)
    throw std::invalid_argument("score model: bad dimension line");
  ScoreModel m = ScoreModel::zeros(dim, nblocks);
  auto read = [&](double& v) {
    if (!(in >> v)) throw std::invalid_argument("score model: truncated parameter data");
  };
  for (auto& blk : m.blocks) {
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) read(blk.v(i, j));
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) read(blk.w(i, j));
    for (Eigen::Index i = 0; i < dim; ++i) read(blk.b[i]);
  }
  m.validate();
  return m;
}

}  // namespace wgd
