#include "wgd/config.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace wgd {
namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& text, const std::string& key) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + text + "'");
  }
  if (trim(text.substr(used)) != "") throw ConfigError(key, "expected a number, got '" + text + "'");
  return v;
}

long to_long(const std::string& text, const std::string& key) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an integer, got '" + text + "'");
  }
  if (trim(text.substr(used)) != "") throw ConfigError(key, "expected an integer, got '" + text + "'");
  return v;
}

/// Typed access to one parsed file. Records every value used and rejects
/// keys nobody asked for.
class Reader {
 public:
  explicit Reader(pt::ptree tree) : tree_(std::move(tree)) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    known_[section].insert(key);
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return trim(*v);
  }

  std::string text(const std::string& section, const std::string& key, const std::string& def) {
    const std::string v = raw(section, key).value_or(def);
    resolved_[section][key] = v;
    return v;
  }

  double number(const std::string& section, const std::string& key, double def) {
    const auto v = raw(section, key);
    const double out = v ? to_double(*v, section + "." + key) : def;
    resolved_[section][key] = v ? *v : format(def);
    return out;
  }

  long integer(const std::string& section, const std::string& key, long def) {
    const auto v = raw(section, key);
    const long out = v ? to_long(*v, section + "." + key) : def;
    resolved_[section][key] = std::to_string(out);
    return out;
  }

  bool flag(const std::string& section, const std::string& key, bool def) {
    const auto v = raw(section, key);
    bool out = def;
    if (v) {
      if (*v == "true" || *v == "1" || *v == "yes") out = true;
      else if (*v == "false" || *v == "0" || *v == "no") out = false;
      else throw ConfigError(section + "." + key, "expected true or false, got '" + *v + "'");
    }
    resolved_[section][key] = out ? "true" : "false";
    return out;
  }

  std::optional<Vector> vector(const std::string& section, const std::string& key) {
    const auto v = raw(section, key);
    if (!v) return std::nullopt;
    resolved_[section][key] = *v;
    try {
      return parse_vector(*v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(section + "." + key, e.what());
    }
  }

  Matrix matrix(const std::string& section, const std::string& key, const std::string& def, Eigen::Index dim) {
    const std::string v = text(section, key, def);
    try {
      return parse_matrix(v, dim);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(section + "." + key, e.what());
    }
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      const auto it = known_.find(section);
      if (it == known_.end()) throw ConfigError(section, "unknown section");
      if (body.data() != "" && body.empty()) throw ConfigError(section, "key outside of any section");
      for (const auto& [key, value] : body)
        if (!it->second.count(key)) throw ConfigError(section + "." + key, "unknown key");
    }
  }

  std::map<std::string, std::map<std::string, std::string>> resolved() const { return resolved_; }

  static std::string format(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  }

 private:
  pt::ptree tree_;
  std::map<std::string, std::set<std::string>> known_;
  std::map<std::string, std::map<std::string, std::string>> resolved_;
};

template <typename T>
void require(bool ok, const std::string& key, const T& message) {
  if (!ok) throw ConfigError(key, message);
}

}  // namespace

ExperimentKind parse_experiment_kind(const std::string& name) {
  if (name == "gaussian-oracle") return ExperimentKind::gaussian_oracle;
  if (name == "banana") return ExperimentKind::banana;
  if (name == "eggbox") return ExperimentKind::eggbox;
  if (name == "logistic-regression") return ExperimentKind::logistic_regression;
  if (name == "theory-check") return ExperimentKind::theory_check;
  throw std::invalid_argument("unknown experiment kind '" + name +
                              "' (expected gaussian-oracle, banana, eggbox, logistic-regression or theory-check)");
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::gaussian_oracle: return "gaussian-oracle";
    case ExperimentKind::banana: return "banana";
    case ExperimentKind::eggbox: return "eggbox";
    case ExperimentKind::logistic_regression: return "logistic-regression";
    case ExperimentKind::theory_check: return "theory-check";
  }
  return "gaussian-oracle";
}

Vector parse_vector(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell = trim(cell);
    if (cell.empty()) throw std::invalid_argument("empty entry in list '" + text + "'");
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("not a number: '" + cell + "'");
    }
    if (used != cell.size()) throw std::invalid_argument("not a number: '" + cell + "'");
    values.push_back(v);
  }
  if (values.empty()) throw std::invalid_argument("empty list");
  return Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Matrix parse_matrix(const std::string& text, Eigen::Index dim) {
  if (text.find(';') == std::string::npos && text.find(',') == std::string::npos) {
    const Vector s = parse_vector(text);
    return s[0] * Matrix::Identity(dim, dim);
  }
  std::vector<Vector> rows;
  std::stringstream ss(text);
  std::string row;
  while (std::getline(ss, row, ';')) rows.push_back(parse_vector(row));
  if (static_cast<Eigen::Index>(rows.size()) != dim)
    throw std::invalid_argument("matrix needs " + std::to_string(dim) + " rows");
  Matrix m(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (rows[i].size() != dim) throw std::invalid_argument("matrix row " + std::to_string(i + 1) + " has the wrong length");
    m.row(i) = rows[i].transpose();
  }
  return m;
}

ExperimentConfig parse_experiment_config(std::istream& in, const std::string& source) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("syntax", source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  Reader r(std::move(tree));
  ExperimentConfig c;

  const std::string kind = r.text("experiment", "kind", "");
  require(!kind.empty(), "experiment.kind", "missing experiment kind");
  try {
    c.kind = parse_experiment_kind(kind);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("experiment.kind", e.what());
  }
  c.seed = static_cast<std::uint64_t>(r.integer("experiment", "seed", 0));
  c.out_dir = r.text("experiment", "out", "out/" + kind);
  c.timing = r.flag("experiment", "timing", false);

  // target
  auto& t = c.target;
  const long default_dim = c.kind == ExperimentKind::logistic_regression ? 3 : 2;
  t.dim = r.integer("target", "dim", default_dim);
  require(t.dim >= 1, "target.dim", "must be >= 1");
  switch (c.kind) {
    case ExperimentKind::gaussian_oracle: {
      t.mean = r.vector("target", "mean").value_or(Vector::Zero(t.dim));
      require(t.mean.size() == t.dim, "target.mean", "length must equal target.dim");
      t.covariance = r.matrix("target", "covariance", "1", t.dim);
      break;
    }
    case ExperimentKind::banana:
      require(t.dim >= 2, "target.dim", "banana needs dim >= 2");
      t.b = r.number("target", "b", 0.01);
      require(t.b > 0.0, "target.b", "must be > 0");
      break;
    case ExperimentKind::eggbox:
      t.spread = r.number("target", "spread", 5.0);
      t.correlation = r.number("target", "correlation", 0.5);
      require(t.dim >= 2, "target.dim", "eggbox needs dim >= 2");
      require(t.correlation > -1.0 && t.correlation < 1.0, "target.correlation", "must lie in (-1, 1)");
      break;
    case ExperimentKind::logistic_regression: {
      t.data_path = r.text("target", "data", "");
      t.standardize = r.flag("target", "standardize", true);
      t.sigma0_sq = r.number("target", "sigma0_sq", 100.0);
      require(t.sigma0_sq > 0.0, "target.sigma0_sq", "must be > 0");
      t.synth_n = r.integer("target", "synth_n", 2000);
      require(t.synth_n >= 1, "target.synth_n", "must be >= 1");
      t.data_seed = static_cast<std::uint64_t>(r.integer("target", "data_seed", 7));
      if (t.data_path.empty()) {
        Vector theta = Vector::Zero(t.dim);
        if (t.dim == 3) theta << 1.0, -1.0, 0.5;
        t.true_theta = r.vector("target", "true_theta").value_or(theta);
        require(t.true_theta.size() == t.dim, "target.true_theta", "length must equal target.dim");
      }
      break;
    }
    case ExperimentKind::theory_check: break;
  }

  // particles and mu0
  auto& init = c.init;
  init.particles = r.integer("init", "particles", 1000);
  require(init.particles >= 1, "init.particles", "must be >= 1");
  init.mean = r.vector("init", "mean");
  if (init.mean && c.kind != ExperimentKind::logistic_regression)
    require(init.mean->size() == t.dim, "init.mean", "length must equal target.dim");
  init.scale = r.number("init", "scale", 1.0);
  require(init.scale > 0.0, "init.scale", "must be > 0");
  init.mode_iters = static_cast<int>(r.integer("init", "mode_iters", 100));

  // schedules
  auto& run = c.run;
  run.step.eps0 = r.number("schedule", "eps0", 0.01);
  require(run.step.eps0 > 0.0, "schedule.eps0", "must be > 0");
  run.step.alpha = r.number("schedule", "alpha", 0.6);
  require(run.step.alpha > 0.5 && run.step.alpha <= 1.0, "schedule.alpha",
          "must lie in (1/2, 1] so that sum eta = inf and sum eta^2 < inf, got " + Reader::format(run.step.alpha));
  const long horizon = r.integer("schedule", "anneal_horizon", 0);
  require(horizon >= 0, "schedule.anneal_horizon", "must be >= 0 (0 disables annealing)");
  if (horizon > 0) run.anneal = AnnealSchedule{static_cast<int>(horizon)};
  run.stop.patience = static_cast<int>(r.integer("schedule", "patience", 20));
  require(run.stop.patience >= 1, "schedule.patience", "must be >= 1");
  run.stop.max_iters = static_cast<int>(r.integer("schedule", "max_iters", 1000));
  require(run.stop.max_iters >= 1, "schedule.max_iters", "must be >= 1");
  run.stop.rel_improvement = r.number("schedule", "rel_improvement", 1e-6);
  require(run.stop.rel_improvement >= 0.0, "schedule.rel_improvement", "must be >= 0");
  run.divergence_bound = r.number("schedule", "divergence_bound", 1e6);
  require(run.divergence_bound > 0.0, "schedule.divergence_bound", "must be > 0");

  // score estimation
  auto& sc = run.score;
  const std::string mode = r.text("score", "mode", "learned");
  if (mode == "learned") sc.mode = ScoreMode::learned;
  else if (mode == "gaussian-fit") sc.mode = ScoreMode::gaussian_fit;
  else throw ConfigError("score.mode", "expected learned or gaussian-fit, got '" + mode + "'");
  const std::string optimizer = r.text("score", "optimizer", "sgd");
  if (optimizer == "sgd") sc.train.optimizer = Optimizer::sgd;
  else if (optimizer == "lbfgs") sc.train.optimizer = Optimizer::lbfgs;
  else throw ConfigError("score.optimizer", "expected sgd or lbfgs, got '" + optimizer + "'");
  sc.blocks = static_cast<int>(r.integer("score", "blocks", 2));
  require(sc.blocks >= 1, "score.blocks", "must be >= 1");
  sc.train.steps = static_cast<int>(r.integer("score", "steps", 200));
  require(sc.train.steps >= 1, "score.steps", "must be >= 1");
  sc.train.batch_size = static_cast<int>(r.integer("score", "batch_size", 256));
  require(sc.train.batch_size >= 1, "score.batch_size", "must be >= 1");
  sc.train.learning_rate = r.number("score", "learning_rate", 1e-3);
  require(sc.train.learning_rate > 0.0, "score.learning_rate", "must be > 0");
  const double clip = r.number("score", "grad_clip", 10.0);
  require(clip >= 0.0, "score.grad_clip", "must be >= 0 (0 disables clipping)");
  sc.train.grad_clip = clip > 0.0 ? std::optional<double>(clip) : std::nullopt;
  sc.initial_steps = static_cast<int>(r.integer("score", "initial_steps", 1000));
  require(sc.initial_steps >= 0, "score.initial_steps", "must be >= 0");
  sc.refresh_stride = static_cast<int>(r.integer("score", "refresh_stride", 1));
  require(sc.refresh_stride >= 1, "score.refresh_stride", "must be >= 1");
  sc.standardize = r.flag("score", "standardize", true);

  // baselines
  c.mcmc.burn_in = r.integer("mcmc", "burn_in", 10000);
  require(c.mcmc.burn_in >= 0, "mcmc.burn_in", "must be >= 0");
  c.mcmc.iters = r.integer("mcmc", "iters", 10000);
  require(c.mcmc.iters >= 1, "mcmc.iters", "must be >= 1");
  c.mcmc.adapt_start = r.integer("mcmc", "adapt_start", 1000);
  require(c.mcmc.adapt_start >= 1, "mcmc.adapt_start", "must be >= 1");
  c.mcmc.target_accept = r.number("mcmc", "target_accept", 0.234);
  require(c.mcmc.target_accept > 0.0 && c.mcmc.target_accept < 1.0, "mcmc.target_accept", "must lie in (0, 1)");
  c.mcmc.init_scale = r.number("mcmc", "init_scale", 0.1);
  require(c.mcmc.init_scale > 0.0, "mcmc.init_scale", "must be > 0");
  c.gvb.steps = static_cast<int>(r.integer("gvb", "steps", 5000));
  require(c.gvb.steps >= 1, "gvb.steps", "must be >= 1");
  c.gvb.mc_samples = static_cast<int>(r.integer("gvb", "mc_samples", 64));
  require(c.gvb.mc_samples >= 1, "gvb.mc_samples", "must be >= 1");
  c.gvb.learning_rate = r.number("gvb", "learning_rate", 0.01);
  require(c.gvb.learning_rate >= 0.0, "gvb.learning_rate", "must be >= 0");
  c.gvb_init_scale = r.number("gvb", "init_scale", 1.0);
  require(c.gvb_init_scale > 0.0, "gvb.init_scale", "must be > 0");

  // comparison
  const std::string methods = r.text("compare", "methods", "wgd,mcmc,gvb");
  {
    std::stringstream ss(methods);
    std::string m;
    while (std::getline(ss, m, ',')) {
      m = trim(m);
      if (m.empty()) continue;
      require(m == "wgd" || m == "mcmc" || m == "gvb", "compare.methods", "unknown method '" + m + "'");
      c.compare.methods.push_back(m);
    }
  }
  c.compare.reference_samples = r.integer("compare", "reference_samples", 10000);
  require(c.compare.reference_samples >= 1, "compare.reference_samples", "must be >= 1");
  c.compare.projections = static_cast<int>(r.integer("compare", "projections", 128));
  require(c.compare.projections >= 1, "compare.projections", "must be >= 1");

  // theory checks
  if (c.kind == ExperimentKind::theory_check) {
    auto& th = c.theory;
    const Eigen::Index d = t.dim;
    Vector mu_mean = Vector::Constant(d, 3.0);
    th.mu.mean = r.vector("theory", "mu_mean").value_or(mu_mean);
    th.mu.covariance = r.matrix("theory", "mu_covariance", "2", d);
    th.pi.mean = r.vector("theory", "pi_mean").value_or(Vector::Zero(d));
    th.pi.covariance = r.matrix("theory", "pi_covariance", "1", d);
    require(th.mu.mean.size() == d, "theory.mu_mean", "length must equal target.dim");
    require(th.pi.mean.size() == d, "theory.pi_mean", "length must equal target.dim");
    th.steps = r.integer("theory", "steps", 5000);
    require(th.steps >= 1, "theory.steps", "must be >= 1");
    th.prefix = r.integer("theory", "prefix", 100);
    require(th.prefix >= 1, "theory.prefix", "must be >= 1");
    th.sweep_lo = r.number("theory", "sweep_lo", 1e-4);
    th.sweep_hi = r.number("theory", "sweep_hi", 1e-2);
    require(th.sweep_lo > 0.0 && th.sweep_hi > th.sweep_lo, "theory.sweep_hi", "need 0 < sweep_lo < sweep_hi");
    th.sweep_n = static_cast<int>(r.integer("theory", "sweep_n", 21));
    require(th.sweep_n >= 2, "theory.sweep_n", "must be >= 2");
    th.contraction_pairs = static_cast<int>(r.integer("theory", "contraction_pairs", 100));
    require(th.contraction_pairs >= 1, "theory.contraction_pairs", "must be >= 1");
    th.noise_steps = r.integer("theory", "noise_steps", 2000);
    require(th.noise_steps >= 1, "theory.noise_steps", "must be >= 1");
    th.noise_reps = static_cast<int>(r.integer("theory", "noise_reps", 100));
    require(th.noise_reps >= 1, "theory.noise_reps", "must be >= 1");
    th.noise_magnitude = r.number("theory", "noise_magnitude", 0.1);
    require(th.noise_magnitude >= 0.0, "theory.noise_magnitude", "must be >= 0");
    th.noise_eps0 = r.number("theory", "noise_eps0", 0.01);
    require(th.noise_eps0 > 0.0, "theory.noise_eps0", "must be > 0");
    const auto mags = r.vector("theory", "magnitudes");
    if (mags) {
      th.magnitudes.assign(mags->data(), mags->data() + mags->size());
      for (double m : th.magnitudes) require(m >= 0.0, "theory.magnitudes", "entries must be >= 0");
    } else {
      th.magnitudes = {0.0, 0.05, 0.1, 0.2, 0.5};
      r.text("theory", "magnitudes", "0,0.05,0.1,0.2,0.5");
    }
    try {
      th.mu.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("theory.mu_covariance", e.what());
    }
    try {
      th.pi.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("theory.pi_covariance", e.what());
    }
  }

  r.reject_unknown();
  c.resolved = r.resolved();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  return parse_experiment_config(in, path.string());
}

}  // namespace wgd
