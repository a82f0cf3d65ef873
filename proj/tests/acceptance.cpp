// Acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance <1..11 | all>
//
// Experiment configs are read from the repository's configs/ directory and
// outputs go under the current working directory.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <string>

#include "wgd/config.hpp"
#include "wgd/experiments.hpp"
#include "wgd/oracle.hpp"
#include "wgd/random.hpp"
#include "wgd/score_model.hpp"

using namespace wgd;
namespace fs = std::filesystem;

namespace {

// Tolerances and runtime limits.
constexpr double kOracleMeanTol = 1e-2;
constexpr double kOracleCovTol = 2e-2;
constexpr double kOracleSeconds = 60;
constexpr double kKlRatioTol = 1e-3;
constexpr double kConvergenceSeconds = 10;
constexpr double kDescentSeconds = 5;
constexpr double kGradFloor = 1e-8;
constexpr int kContractionPairs = 100;
constexpr double kContractionSeconds = 10;
constexpr long kNoiseSteps = 2000;
constexpr int kNoiseReps = 100;
constexpr double kNoiseMagnitude = 0.1;
constexpr double kNoiseSeconds = 120;
constexpr double kScoreRmseTol = 0.1;
constexpr double kScoreGradTol = 1e-3;
constexpr double kScoreSeconds = 60;
constexpr double kBananaMeanTol = 0.5;
constexpr double kBananaVar1Lo = 80, kBananaVar1Hi = 120;
constexpr double kBananaVar2Lo = 0.7, kBananaVar2Hi = 1.4;
constexpr double kBananaSeconds = 600;
constexpr double kModeFracLo = 0.15, kModeFracHi = 0.35;
constexpr double kModeDispTol = 0.5;
constexpr double kEggboxSeconds = 600;
constexpr double kPosteriorMeanTol = 0.1;
constexpr double kPosteriorSdRelTol = 0.2;
constexpr double kLogisticSeconds = 600;
constexpr double kGvbRatioMin = 2.0;
constexpr double kGvbSeconds = 300;

const fs::path kConfigDir = WGD_CONFIG_DIR;

struct Verdict {
  bool passed = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

ExperimentConfig config(const std::string& name) { return load_experiment_config(kConfigDir / name); }

CommandOptions into(const std::string& dir) {
  CommandOptions o;
  o.out_dir = fs::current_path() / "acceptance_out" / dir;
  fs::remove_all(*o.out_dir);
  return o;
}

double metric(const Metrics& m, const std::string& name) {
  for (const auto& [k, v] : m)
    if (k == name) return v;
  throw std::runtime_error("missing metric " + name);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict gaussian_oracle() {
  Clock clock;
  const auto out = cmd_run(config("gaussian_oracle.ini"), into("c1"));
  const double secs = clock.seconds();
  const double mean_err = metric(out.metrics, "oracle_mean_error");
  const double cov_err = metric(out.metrics, "oracle_cov_rel_error");
  return {mean_err < kOracleMeanTol && cov_err < kOracleCovTol && secs < kOracleSeconds,
          "mean_err=" + num(mean_err) + " cov_rel_err=" + num(cov_err) + " seconds=" + num(secs)};
}

struct Regularity {
  double alpha, beta;
};

Regularity regularity(const GaussianState& pi) {
  const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(pi.covariance).eigenvalues();
  return {1.0 / ev.maxCoeff(), 1.0 / ev.minCoeff()};
}

Verdict kl_convergence() {
  const auto c = config("theory.ini");
  const auto& th = c.theory;
  const auto reg = regularity(th.pi);
  Clock clock;
  const auto r = oracle::check_kl_convergence(th.mu, th.pi, c.run.step, th.steps, reg.alpha, reg.beta, th.prefix);
  const double secs = clock.seconds();
  return {r.ratio < kKlRatioTol && r.monotone && r.talagrand_ok && secs < kConvergenceSeconds,
          "steps=" + std::to_string(r.steps) + " eps0=" + num(c.run.step.eps0) + " kl_ratio=" + num(r.ratio) +
              " monotone_after_5=" + (r.monotone ? "yes" : "no") + " talagrand_worst_slack=" +
              num(r.worst_talagrand_slack) + " seconds=" + num(secs)};
}

Verdict descent() {
  const auto c = config("theory.ini");
  const auto& th = c.theory;
  Clock clock;
  const auto r = oracle::check_descent(th.mu, th.pi, oracle::log_space(1e-4, 1e-2, th.sweep_n),
                                     regularity(th.pi).beta, kGradFloor);
  const double secs = clock.seconds();
  bool strict = true;
  for (const auto& row : r.rows)
    if (row.grad_sq > kGradFloor && !(row.delta_f < 0.0)) strict = false;
  return {strict && r.remainder_bounded && std::isfinite(r.remainder_ratio) && secs < kDescentSeconds,
          "etas=" + std::to_string(r.rows.size()) + " remainder_ratio=" + num(r.remainder_ratio) +
              " seconds=" + num(secs)};
}

Verdict w2_contraction() {
  const auto c = config("theory.ini");
  Clock clock;
  int held = 0;
  double worst = -1e300;
  for (int k = 0; k < kContractionPairs; ++k) {
    const auto seed = derive_seed(c.seed, 8, static_cast<std::uint64_t>(k));
    const auto mu = oracle::random_gaussian_state(c.target.dim, derive_seed(seed, 0));
    const auto pi = oracle::random_gaussian_state(c.target.dim, derive_seed(seed, 1));
    const double lip = oracle::lipschitz_surrogate(mu, pi);
    const double eta = std::min(1e-3, oracle::kl_gaussian(mu, pi) / (lip * lip));
    const auto r = oracle::check_w2_contraction(mu, pi, eta, lip);
    held += r.holds ? 1 : 0;
    worst = std::max(worst, r.w2_sq_after - r.rhs);
  }
  const double secs = clock.seconds();
  return {held == kContractionPairs && secs < kContractionSeconds,
          std::to_string(held) + "/" + std::to_string(kContractionPairs) + " pairs hold, worst lhs-rhs=" + num(worst) +
              " seconds=" + num(secs)};
}

Verdict noise_robustness() {
  const auto c = config("theory.ini");
  const auto& th = c.theory;
  oracle::PerturbationSpec spec;
  spec.kind = oracle::PerturbationKind::zero_mean_noise;
  spec.magnitude = kNoiseMagnitude;
  spec.seed = derive_seed(c.seed, 9);
  StepSchedule step = c.run.step;
  step.eps0 = th.noise_eps0;
  Clock clock;
  const auto r = oracle::check_noise_bound(th.mu, th.pi, step, kNoiseSteps, spec, kNoiseReps);
  const double secs = clock.seconds();
  return {r.holds && r.mean_f_avg <= r.bound && secs < kNoiseSeconds,
          "eps0=" + num(step.eps0) + " seed_mean=" + num(r.mean_f_avg) + " bound=" + num(r.bound) +
              " L=" + num(r.lipschitz) + " seconds=" + num(secs)};
}

Verdict score_matching() {
  Clock clock;
  Philox rng(2024, 0);
  const RowMatrix samples = standard_normal_matrix(rng, 5000, 2);
  TrainConfig train;
  train.optimizer = Optimizer::lbfgs;
  train.steps = 500;
  train.batch_size = 5000;
  train.seed = 2024;
  const auto fit = fit_score(samples, std::nullopt, train, 1);

  double sq = 0.0;
  int count = 0;
  for (int i = 0; i <= 40; ++i)
    for (int j = 0; j <= 40; ++j) {
      const Vector x = (Vector(2) << -2.0 + 0.1 * i, -2.0 + 0.1 * j).finished();
      sq += (eval_score(fit.model, x) + x).squaredNorm();
      ++count;
    }
  const double rmse = std::sqrt(sq / count);

  // Parameter gradients on the trained model and on a random two-block model.
  const RowMatrix batch = samples.topRows(64);
  double worst = 0.0;
  for (const ScoreModel& m : {fit.model, ScoreModel::random(2, 2, 77)}) {
    ScoreModel grad = m;
    grad.blocks = sm_grad(m, batch).blocks;
    const Vector analytic = grad.flatten();
    const Vector theta = m.flatten();
    const double h = 1e-5;
    for (Eigen::Index p = 0; p < theta.size(); ++p) {
      Vector tp = theta, tm = theta;
      tp[p] += h;
      tm[p] -= h;
      ScoreModel mp = m, mm = m;
      mp.assign(tp);
      mm.assign(tm);
      const double fd = (sm_loss(mp, batch) - sm_loss(mm, batch)) / (2 * h);
      worst = std::max(worst, std::abs(analytic[p] - fd) / std::max(1e-2, std::abs(fd)));
    }
  }
  const double secs = clock.seconds();
  return {rmse < kScoreRmseTol && worst < kScoreGradTol && secs < kScoreSeconds,
          "grid_rmse=" + num(rmse) + " grad_rel_err=" + num(worst) + " seconds=" + num(secs)};
}

Verdict banana() {
  Clock clock;
  const auto out = cmd_run(config("banana.ini"), into("c7"));
  const double secs = clock.seconds();
  const auto& m = out.metrics;
  const double m1 = metric(m, "pullback_mean_x1"), m2 = metric(m, "pullback_mean_x2");
  const double v1 = metric(m, "pullback_var_x1"), v2 = metric(m, "pullback_var_x2");
  const bool moments = std::abs(m1) < kBananaMeanTol && std::abs(m2) < kBananaMeanTol && v1 >= kBananaVar1Lo &&
                       v1 <= kBananaVar1Hi && v2 >= kBananaVar2Lo && v2 <= kBananaVar2Hi;

  // d = 100 smoke run: must complete without tripping the divergence guard.
  std::string smoke = "ok";
  bool smoke_ok = true;
  try {
    const auto big = cmd_run(config("banana_d100.ini"), into("c7_d100"));
    smoke = "ok iterations=" + std::to_string(big.result.trace.records.size());
  } catch (const std::exception& e) {
    smoke_ok = false;
    smoke = std::string("failed: ") + e.what();
  }
  return {moments && secs < kBananaSeconds && smoke_ok,
          "pullback mean=(" + num(m1) + ", " + num(m2) + ") var=(" + num(v1) + ", " + num(v2) +
              ") seconds=" + num(secs) + " d100_smoke=" + smoke};
}

Verdict eggbox() {
  Clock clock;
  const auto out = cmd_run(config("eggbox.ini"), into("c8"));
  const double secs = clock.seconds();
  bool ok = secs < kEggboxSeconds;
  std::string frac = "fractions=", disp = " displacements=", cov = " cov_rel_error(reported)=";
  for (int k = 1; k <= 4; ++k) {
    const double f = metric(out.metrics, "mode_fraction_" + std::to_string(k));
    const double d = metric(out.metrics, "mode_displacement_" + std::to_string(k));
    ok = ok && f >= kModeFracLo && f <= kModeFracHi && d < kModeDispTol;
    const std::string sep = k == 1 ? "" : ",";
    frac += sep + num(f);
    disp += sep + num(d);
    cov += sep + num(metric(out.metrics, "mode_cov_rel_error_" + std::to_string(k)));
  }
  return {ok, frac + disp + cov + " seconds=" + num(secs)};
}

Verdict logistic() {
  Clock clock;
  const auto out = cmd_compare(config("logistic.ini"), into("c9"));
  const double secs = clock.seconds();
  bool ok = secs < kLogisticSeconds;
  std::string detail;
  for (int j = 1; j <= 3; ++j) {
    const auto s = std::to_string(j);
    const double mw = metric(out.metrics, "wgd_mean_x" + s), mm = metric(out.metrics, "mcmc_mean_x" + s);
    const double sw = metric(out.metrics, "wgd_sd_x" + s), sm = metric(out.metrics, "mcmc_sd_x" + s);
    const double sd_rel = std::abs(sw - sm) / sm;
    ok = ok && std::abs(mw - mm) < kPosteriorMeanTol && sd_rel < kPosteriorSdRelTol;
    detail += "x" + s + ": dmean=" + num(mw - mm) + " sd_rel=" + num(sd_rel) + " ";
  }
  return {ok, detail + "mcmc_acceptance=" + num(metric(out.metrics, "mcmc_acceptance")) + " seconds=" + num(secs)};
}

Verdict gvb_failure() {
  Clock clock;
  const auto out = cmd_compare(config("banana.ini"), into("c10"));
  const double secs = clock.seconds();
  const double ratio = metric(out.metrics, "sliced_w2_ratio_gvb_over_wgd");
  return {ratio >= kGvbRatioMin && secs < kGvbSeconds,
          "ratio=" + num(ratio) + " gvb_sw2=" + num(metric(out.metrics, "gvb_sliced_w2")) +
              " wgd_sw2=" + num(metric(out.metrics, "wgd_sliced_w2")) + " seconds=" + num(secs)};
}

Verdict determinism() {
  struct Case {
    std::string config, command;
    std::vector<std::string> files;
  };
  const std::vector<Case> cases = {
      {"gaussian_oracle.ini", "run", {"particles.csv", "trace.csv"}},
      {"theory.ini", "theory-check",
       {"descent_sweep.csv", "contraction_pairs.csv", "convergence_trace.csv", "noise_sweep.csv", "summary.csv"}},
      {"banana.ini", "run", {"particles.csv", "trace.csv"}},
      {"banana_d100.ini", "run", {"particles.csv", "trace.csv"}},
      {"eggbox.ini", "run", {"particles.csv", "trace.csv"}},
      {"logistic.ini", "compare", {"particles_wgd.csv", "particles_mcmc.csv", "trace_wgd.csv", "compare.csv"}},
      {"banana.ini", "compare", {"particles_wgd.csv", "particles_gvb.csv", "trace_wgd.csv", "compare.csv"}},
  };
  Clock clock;
  int identical = 0;
  std::string differing;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const auto& cs = cases[k];
    fs::path dirs[2];
    const int threads[2] = {1, 3};
    for (int r = 0; r < 2; ++r) {
      omp_set_num_threads(threads[r]);
      auto opts = into("c11/" + std::to_string(k) + "_t" + std::to_string(threads[r]));
      dirs[r] = *opts.out_dir;
      const auto c = config(cs.config);
      if (cs.command == "run") cmd_run(c, opts);
      else if (cs.command == "compare") cmd_compare(c, opts);
      else cmd_theory_check(c, opts);
    }
    bool same = true;
    for (const auto& f : cs.files) same = same && slurp(dirs[0] / f) == slurp(dirs[1] / f);
    if (same) ++identical;
    else differing += " " + cs.command + ":" + cs.config;
  }
  return {identical == static_cast<int>(cases.size()),
          std::to_string(identical) + "/" + std::to_string(cases.size()) +
              " experiments byte-identical at 1 vs 3 threads" + (differing.empty() ? "" : ", differing:" + differing) +
              " seconds=" + num(clock.seconds())};
}

const std::map<int, std::pair<std::string, std::function<Verdict()>>> kCriteria = {
    {1, {"gaussian-oracle-equivalence", gaussian_oracle}},
    {2, {"kl-convergence-witness", kl_convergence}},
    {3, {"descent-inequality", descent}},
    {4, {"w2-contraction", w2_contraction}},
    {5, {"noise-robustness", noise_robustness}},
    {6, {"score-matching-quality", score_matching}},
    {7, {"banana-moments", banana}},
    {8, {"eggbox-modes", eggbox}},
    {9, {"logistic-mcmc-agreement", logistic}},
    {10, {"gvb-failure-mode", gvb_failure}},
    {11, {"determinism", determinism}},
};

bool run_one(int id) {
  const auto& [name, fn] = kCriteria.at(id);
  Verdict v;
  try {
    v = fn();
  } catch (const std::exception& e) {
    v = {false, std::string("error: ") + e.what()};
  }
  std::cout << (v.passed ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << v.detail << std::endl;
  return v.passed;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: acceptance <1..11 | all>\n";
    return 2;
  }
  const std::string which = argv[1];
  bool ok = true;
  if (which == "all") {
    for (const auto& [id, entry] : kCriteria) ok = run_one(id) && ok;
  } else {
    const int id = std::stoi(which);
    if (!kCriteria.count(id)) {
      std::cerr << "unknown criterion " << which << '\n';
      return 2;
    }
    ok = run_one(id);
  }
  return ok ? 0 : 1;
}
