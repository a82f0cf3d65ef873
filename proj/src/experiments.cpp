#include "wgd/experiments.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "wgd/csv_io.hpp"
#include "wgd/diagnostics.hpp"
#include "wgd/linalg.hpp"
#include "wgd/random.hpp"

namespace wgd {
namespace {

namespace fs = std::filesystem;

// Child-seed tags, one per consumer of randomness.
enum SeedTag : std::uint64_t {
  kSeedCloud = 1,
  kSeedRun = 2,
  kSeedReference = 3,
  kSeedMcmc = 4,
  kSeedGvb = 5,
  kSeedGvbDraws = 6,
  kSeedSlices = 7,
  kSeedPairs = 8,
  kSeedNoise = 9,
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string indexed(const std::string& stem, std::size_t j) { return stem + std::to_string(j + 1); }

/// Progress line on stderr every `every` iterations.
std::function<void(const TraceRecord&)> progress(bool quiet, int every = 10) {
  if (quiet) return {};
  return [every](const TraceRecord& r) {
    if (r.t % every != 0) return;
    std::cerr << "t=" << r.t << " eta=" << r.eta << " a=" << r.anneal << " err=" << r.err
              << " sm_loss=" << r.sm_loss << '\n';
  };
}

void add_cloud_moments(Metrics& m, const std::string& prefix, const RowMatrix& cloud) {
  const Vector mean = linalg::row_mean(cloud);
  const Matrix cov = linalg::row_covariance(cloud, mean);
  for (Eigen::Index j = 0; j < cloud.cols(); ++j) {
    m.emplace_back(indexed(prefix + "mean_x", j), mean[j]);
    m.emplace_back(indexed(prefix + "sd_x", j), std::sqrt(cov(j, j)));
  }
}

Matrix precision_of(const GaussianState& s) {
  return s.covariance.llt().solve(Matrix::Identity(s.dim(), s.dim()));
}

std::vector<Vector> eggbox_centers(const ExperimentConfig& c) {
  return default_eggbox_means(c.target.dim, c.target.spread);
}

/// Kind-specific diagnostics of a final cloud.
Metrics describe_cloud(const ExperimentConfig& c, const Target& target, const RowMatrix& cloud,
                       const fs::path& dir, const std::string& label) {
  Metrics m;
  switch (c.kind) {
    case ExperimentKind::banana: {
      const RowMatrix pulled = banana_forward(cloud, c.target.b);
      const Vector mean = linalg::row_mean(pulled);
      const Matrix cov = linalg::row_covariance(pulled, mean);
      for (Eigen::Index j = 0; j < std::min<Eigen::Index>(2, pulled.cols()); ++j) {
        m.emplace_back(indexed("pullback_mean_x", j), mean[j]);
        m.emplace_back(indexed("pullback_var_x", j), cov(j, j));
      }
      Vector ref_var = Vector::Ones(pulled.cols());
      ref_var[0] = 100.0;
      const auto report = moment_test(pulled, Vector::Zero(pulled.cols()), Matrix(ref_var.asDiagonal()), 0.5, 0.2);
      m.emplace_back("pullback_mean_error", report.mean_error);
      m.emplace_back("pullback_cov_rel_error", report.cov_rel_error);
      break;
    }
    case ExperimentKind::eggbox: {
      const auto centers = eggbox_centers(c);
      const auto report = mode_masses(cloud, centers);
      csv::write_modes(dir / (label + "modes.csv"), report);
      const auto covs = default_eggbox_covariances(c.target.dim, c.target.correlation);
      // Per-mode covariance error, reported only.
      std::vector<std::vector<Eigen::Index>> members(centers.size());
      for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < centers.size(); ++k) {
          const double dd = (cloud.row(i).transpose() - centers[k]).squaredNorm();
          if (dd < best_d) best_d = dd, best = k;
        }
        members[best].push_back(i);
      }
      for (std::size_t k = 0; k < centers.size(); ++k) {
        m.emplace_back(indexed("mode_fraction_", k), report.fractions[k]);
        m.emplace_back(indexed("mode_displacement_", k), report.displacements[k]);
        double cov_err = std::numeric_limits<double>::quiet_NaN();
        if (members[k].size() > 1) {
          RowMatrix sub(members[k].size(), cloud.cols());
          for (std::size_t i = 0; i < members[k].size(); ++i) sub.row(i) = cloud.row(members[k][i]);
          const Vector mean = linalg::row_mean(sub);
          cov_err = (linalg::row_covariance(sub, mean) - covs[k]).norm() / covs[k].norm();
        }
        m.emplace_back(indexed("mode_cov_rel_error_", k), cov_err);
      }
      break;
    }
    case ExperimentKind::logistic_regression:
      add_cloud_moments(m, "posterior_", cloud);
      for (Eigen::Index j = 0; j < cloud.cols(); ++j)
        csv::write_kde(dir / (label + "kde_x" + std::to_string(j + 1) + ".csv"), kde_marginal(cloud, j));
      break;
    case ExperimentKind::gaussian_oracle: {
      const auto fit = oracle::fit_gaussian(cloud);
      const auto pi = target.gaussian();
      if (pi) {
        m.emplace_back("kl_fit", oracle::kl_gaussian(fit, *pi));
        m.emplace_back("w2_fit", oracle::w2_gaussian(fit, *pi));
      }
      break;
    }
    case ExperimentKind::theory_check: break;
  }
  if (target.has_reference_sampler()) {
    const RowMatrix ref = target.sample(c.compare.reference_samples, derive_seed(c.seed, kSeedReference));
    m.emplace_back("sliced_w2_reference",
                   sliced_w2(cloud, ref, {c.compare.projections, derive_seed(c.seed, kSeedSlices)}));
  }
  return m;
}

nlohmann::json config_json(const ExperimentConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [section, keys] : c.resolved)
    for (const auto& [key, value] : keys) j[section][key] = value;
  j["experiment"]["seed"] = std::to_string(c.seed);
  j["experiment"]["out"] = c.out_dir.string();
  return j;
}

}  // namespace

void apply_overrides(ExperimentConfig& config, const CommandOptions& options) {
  if (options.out_dir) config.out_dir = *options.out_dir;
  if (options.seed) config.seed = *options.seed;
}

TargetPtr build_target(const ExperimentConfig& c) {
  const auto& t = c.target;
  switch (c.kind) {
    case ExperimentKind::gaussian_oracle:
    case ExperimentKind::theory_check: return gaussian_target(t.mean, t.covariance);
    case ExperimentKind::banana: return banana_target(t.dim, t.b);
    case ExperimentKind::eggbox:
      return eggbox_target(default_eggbox_means(t.dim, t.spread), default_eggbox_covariances(t.dim, t.correlation));
    case ExperimentKind::logistic_regression: {
      LogisticRegressionData data =
          t.data_path.empty() ? synth_regression_data(t.synth_n, t.true_theta, t.data_seed, t.sigma0_sq)
                              : load_regression_csv(t.data_path, t.standardize, t.sigma0_sq);
      return logistic_regression_target(std::move(data));
    }
  }
  throw std::logic_error("unhandled experiment kind");
}

GaussianState initial_measure(const ExperimentConfig& c, const Target& target) {
  const Eigen::Index d = target.dim();
  Vector mean = Vector::Zero(d);
  if (c.init.mean) {
    if (c.init.mean->size() != d) throw ConfigError("init.mean", "length must equal the target dimension");
    mean = *c.init.mean;
  } else if (c.kind == ExperimentKind::logistic_regression) {
    const auto reg = target.regularity();
    const double step = reg && reg->beta ? 1.0 / *reg->beta : 1e-3;
    mean = find_mode(target, Vector::Zero(d), c.init.mode_iters, step);
  }
  return {mean, c.init.scale * c.init.scale * Matrix::Identity(d, d)};
}

RunConfig resolve_run(const ExperimentConfig& c, const GaussianState& mu0) {
  RunConfig run = c.run;
  run.mu0 = mu0;
  run.seed = derive_seed(c.seed, kSeedRun);
  return run;
}

long steps_applied(const RunTrace& trace) {
  const auto n = static_cast<long>(trace.records.size());
  return trace.stop_reason == "patience" ? n - 1 : n;
}

void write_manifest(const fs::path& dir, const ExperimentConfig& c, const std::string& command) {
  nlohmann::json j;
  j["version"] = WGD_VERSION;
  j["command"] = command;
  j["timestamp"] = utc_timestamp();
  j["config"] = config_json(c);
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

RunOutcome cmd_run(ExperimentConfig c, const CommandOptions& options) {
  apply_overrides(c, options);
  if (c.kind == ExperimentKind::theory_check)
    throw ConfigError("experiment.kind", "theory-check configs are run with the theory-check command");
  const TargetPtr target = build_target(c);
  const GaussianState mu0 = initial_measure(c, *target);
  RunConfig run = resolve_run(c, mu0);
  run.on_iteration = progress(options.quiet);

  RunOutcome out;
  out.out_dir = c.out_dir;
  fs::create_directories(c.out_dir);
  write_manifest(c.out_dir, c, "run");

  const ParticleCloud init = initial_cloud(mu0, c.init.particles, derive_seed(c.seed, kSeedCloud));
  try {
    out.result = run_wgd(init, *target, run);
  } catch (const std::exception& e) {
    throw std::runtime_error(to_string(c.kind) + " run: " + e.what());
  }
  const auto& trace = out.result.trace;

  csv::write_particles(c.out_dir / "particles.csv", out.result.cloud.positions);
  csv::write_trace(c.out_dir / "trace.csv", trace, c.timing);
  if (out.result.score) {
    std::ofstream model(c.out_dir / "score_model.txt");
    save_score_model(out.result.score->model, model);
  }

  Metrics& m = out.metrics;
  m.emplace_back("iterations", static_cast<double>(trace.records.size()));
  m.emplace_back("steps", static_cast<double>(steps_applied(trace)));
  m.emplace_back("stopped_by_patience", trace.stop_reason == "patience" ? 1.0 : 0.0);
  m.emplace_back("final_err", trace.records.empty() ? 0.0 : trace.records.back().err);
  if (c.kind == ExperimentKind::gaussian_oracle) {
    // Exact moment recursion from mu0 over the same schedule.
    const auto pi = *target->gaussian();
    GaussianState exact = mu0;
    for (long k = 0; k < steps_applied(trace); ++k) exact = oracle::oracle_step(exact, pi, step_size(run.step, k));
    const auto fit = oracle::fit_gaussian(out.result.cloud.positions);
    m.emplace_back("oracle_mean_error", (fit.mean - exact.mean).cwiseAbs().maxCoeff());
    m.emplace_back("oracle_cov_rel_error", (fit.covariance - exact.covariance).norm() / exact.covariance.norm());
    m.emplace_back("kl_oracle", oracle::kl_gaussian(exact, pi));
  }
  for (auto& kv : describe_cloud(c, *target, out.result.cloud.positions, c.out_dir, "")) m.push_back(kv);
  csv::write_metrics(c.out_dir / "diagnostics.csv", m);
  return out;
}

bool TheoryOutcome::all_passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return !checks.empty();
}

TheoryOutcome cmd_theory_check(ExperimentConfig c, const CommandOptions& options) {
  apply_overrides(c, options);
  if (c.kind != ExperimentKind::theory_check)
    throw ConfigError("experiment.kind", "theory-check needs kind = theory-check");
  const auto& th = c.theory;
  const auto pi_target = gaussian_target(th.pi.mean, th.pi.covariance);
  const auto reg = *pi_target->regularity();
  const double alpha = *reg.alpha, beta = *reg.beta;
  TheoryOutcome out;
  out.out_dir = c.out_dir;
  fs::create_directories(c.out_dir);
  write_manifest(c.out_dir, c, "theory-check");
  std::ofstream report(c.out_dir / "theory_report.txt");

  auto with_context = [](const std::string& stage, auto&& fn) {
    try {
      return fn();
    } catch (const StepTooLargeError& e) {
      throw StepTooLargeError("theory-check [" + stage + "]: " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(e.key(), "theory-check [" + stage + "]: " + e.what());
    }
  };

  // Descent inequality over a step-size sweep.
  const auto etas = oracle::log_space(th.sweep_lo, th.sweep_hi, th.sweep_n);
  const auto p1 = with_context("descent", [&] { return oracle::check_descent(th.mu, th.pi, etas, beta); });
  report << oracle::format_key_values(p1.key_values()) << '\n';
  {
    std::vector<std::vector<double>> rows;
    for (const auto& r : p1.rows) rows.push_back({r.eta, r.delta_f, r.grad_sq, r.remainder, r.c_needed});
    csv::write_table(c.out_dir / "descent_sweep.csv", {"eta", "delta_f", "grad_sq", "remainder", "c_needed"}, rows);
  }
  out.checks.push_back({"descent", p1.descent_ok && p1.remainder_bounded,
                        "remainder_ratio=" + csv::format_number(p1.remainder_ratio)});

  // One-step W2 contraction on random pairs.
  {
    std::vector<std::vector<double>> rows;
    int held = 0;
    for (int k = 0; k < th.contraction_pairs; ++k) {
      const auto seed = derive_seed(c.seed, kSeedPairs, static_cast<std::uint64_t>(k));
      const auto mu = oracle::random_gaussian_state(c.target.dim, derive_seed(seed, 0));
      const auto pi = oracle::random_gaussian_state(c.target.dim, derive_seed(seed, 1));
      const double lip = oracle::lipschitz_surrogate(mu, pi);
      const double eta = std::min(1e-3, oracle::kl_gaussian(mu, pi) / (lip * lip));
      const auto r = with_context("contraction", [&] { return oracle::check_w2_contraction(mu, pi, eta, lip); });
      held += r.holds ? 1 : 0;
      rows.push_back({static_cast<double>(k), r.eta, r.lipschitz, r.w2_sq_before, r.w2_sq_after, r.rhs,
                      r.holds ? 1.0 : 0.0});
    }
    csv::write_table(c.out_dir / "contraction_pairs.csv",
                     {"pair", "eta", "lipschitz", "w2_sq_before", "w2_sq_after", "rhs", "holds"}, rows);
    report << "check=w2_contraction\npairs=" << th.contraction_pairs << "\nheld=" << held << "\n\n";
    out.checks.push_back({"w2_contraction", held == th.contraction_pairs,
                          std::to_string(held) + "/" + std::to_string(th.contraction_pairs) + " pairs"});
  }

  // Exact recursion with the configured schedule.
  const auto t1 = with_context("convergence", [&] {
    return oracle::check_kl_convergence(th.mu, th.pi, c.run.step, th.steps, alpha, beta, th.prefix);
  });
  report << oracle::format_key_values(t1.key_values()) << '\n';
  {
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < t1.kl.size(); ++k) rows.push_back({static_cast<double>(k), t1.kl[k], t1.w2_sq[k]});
    csv::write_table(c.out_dir / "convergence_trace.csv", {"k", "kl", "w2_sq"}, rows);
  }
  out.checks.push_back({"convergence_bound", t1.bound_violations == 0 && t1.w_bound_violations == 0,
                        "c_hat=" + csv::format_number(t1.c_hat)});
  out.checks.push_back({"kl_ratio_below_1e-3", t1.ratio < 1e-3, "ratio=" + csv::format_number(t1.ratio)});
  out.checks.push_back({"kl_monotone", t1.monotone, "after iteration " + std::to_string(t1.monotone_from)});
  out.checks.push_back({"talagrand", t1.talagrand_ok, "worst slack=" + csv::format_number(t1.worst_talagrand_slack)});

  // Zero-mean noise sweep for the averaged-iterate bound.
  {
    std::vector<double> mags = th.magnitudes;
    if (std::find(mags.begin(), mags.end(), th.noise_magnitude) == mags.end()) mags.push_back(th.noise_magnitude);
    std::vector<std::vector<double>> rows;
    StepSchedule noise_step = c.run.step;
    noise_step.eps0 = th.noise_eps0;
    for (double mag : mags) {
      oracle::PerturbationSpec spec;
      spec.kind = oracle::PerturbationKind::zero_mean_noise;
      spec.magnitude = mag;
      spec.seed = derive_seed(c.seed, kSeedNoise);
      const auto r = with_context("noise", [&] {
        return oracle::check_noise_bound(th.mu, th.pi, noise_step, th.noise_steps, spec, th.noise_reps);
      });
      rows.push_back({mag, r.mean_f_avg, r.bound, r.lipschitz, r.holds ? 1.0 : 0.0});
      if (mag == th.noise_magnitude) {
        report << oracle::format_key_values(r.key_values()) << '\n';
        out.checks.push_back({"noise_bound", r.holds,
                              "mean=" + csv::format_number(r.mean_f_avg) + " bound=" + csv::format_number(r.bound)});
      }
    }
    csv::write_table(c.out_dir / "noise_sweep.csv", {"magnitude", "mean_f_avg", "bound", "lipschitz", "holds"}, rows);
  }

  // Direction condition under a bias opposing the mean gradient, reported only.
  {
    oracle::PerturbationSpec spec;
    spec.kind = oracle::PerturbationKind::bounded_bias;
    spec.magnitude = 10.0 * std::sqrt(oracle::grad_norm_sq(th.mu, th.pi));
    const Vector mean_grad = precision_of(th.pi) * (th.mu.mean - th.pi.mean);
    if (mean_grad.norm() > 0.0) spec.direction = -mean_grad;
    spec.seed = derive_seed(c.seed, kSeedNoise, 1);
    const auto step = oracle::perturbed_oracle_step(th.mu, th.pi, etas.front(), spec);
    report << "check=bias_direction\nmagnitude=" << spec.magnitude << "\ndelta=" << step.delta
           << "\ndirection_ok=" << (step.direction_ok ? "true" : "false") << "\n\n";
  }

  {
    std::ofstream summary(c.out_dir / "summary.csv");
    summary << "check,passed,detail\n";
    for (const auto& ch : out.checks) summary << ch.name << ',' << (ch.passed ? "true" : "false") << ',' << ch.detail << '\n';
  }
  return out;
}

CompareOutcome cmd_compare(ExperimentConfig c, const CommandOptions& options) {
  apply_overrides(c, options);
  if (c.compare.methods.size() < 2)
    throw ConfigError("compare.methods", "compare needs at least two methods (e.g. wgd,mcmc)");
  if (c.kind == ExperimentKind::theory_check)
    throw ConfigError("experiment.kind", "compare needs a sampling experiment, not theory-check");
  const TargetPtr target = build_target(c);
  const GaussianState mu0 = initial_measure(c, *target);
  CompareOutcome out;
  out.out_dir = c.out_dir;
  fs::create_directories(c.out_dir);
  write_manifest(c.out_dir, c, "compare");

  const Eigen::Index d = target->dim();
  for (const auto& method : c.compare.methods) {
    MethodOutput mo;
    mo.method = method;
    try {
      if (method == "wgd") {
        RunConfig run = resolve_run(c, mu0);
        run.on_iteration = progress(options.quiet);
        const auto init = initial_cloud(mu0, c.init.particles, derive_seed(c.seed, kSeedCloud));
        auto res = run_wgd(init, *target, run);
        csv::write_trace(c.out_dir / "trace_wgd.csv", res.trace, c.timing);
        mo.draws = std::move(res.cloud.positions);
      } else if (method == "mcmc") {
        McmcConfig mc = c.mcmc;
        mc.init = mu0.mean;
        mc.seed = derive_seed(c.seed, kSeedMcmc);
        auto res = adaptive_rw_mcmc(*target, mc);
        out.metrics.emplace_back("mcmc_acceptance", res.acceptance);
        mo.draws = std::move(res.draws.positions);
      } else {
        GvbConfig gc = c.gvb;
        gc.seed = derive_seed(c.seed, kSeedGvb);
        gc.init = {mu0.mean, c.gvb_init_scale * Matrix::Identity(d, d)};
        auto res = gaussian_vb(*target, gc);
        std::vector<std::pair<int, double>> elbo;
        for (const auto& p : res.elbo_trace) elbo.emplace_back(p.step, p.elbo);
        csv::write_elbo(c.out_dir / "elbo_gvb.csv", elbo);
        for (const auto& w : res.warnings) std::cerr << "gvb warning: " << w << '\n';
        mo.draws = sample_gvb(res.state, c.compare.reference_samples, derive_seed(c.seed, kSeedGvbDraws)).positions;
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("compare [" + method + "]: " + e.what());
    }
    csv::write_particles(c.out_dir / ("particles_" + method + ".csv"), mo.draws);
    for (Eigen::Index j = 0; j < d; ++j)
      csv::write_kde(c.out_dir / ("kde_" + method + "_x" + std::to_string(j + 1) + ".csv"), kde_marginal(mo.draws, j));
    out.methods.push_back(std::move(mo));
  }

  // Reference for marginal comparisons: MCMC when present, else the first method.
  std::size_t ref = 0;
  for (std::size_t k = 0; k < out.methods.size(); ++k)
    if (out.methods[k].method == "mcmc") ref = k;
  RowMatrix reference_draws;
  if (target->has_reference_sampler())
    reference_draws = target->sample(c.compare.reference_samples, derive_seed(c.seed, kSeedReference));

  std::ofstream table(c.out_dir / "compare.csv");
  table << "method,coordinate,mean,sd,kde_l1_vs_" << out.methods[ref].method << '\n';
  for (auto& mo : out.methods) {
    const Vector mean = linalg::row_mean(mo.draws);
    const Matrix cov = linalg::row_covariance(mo.draws, mean);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double l1 = kde_l1_distance(mo.draws, out.methods[ref].draws, j);
      table << mo.method << ',' << (j + 1) << ',' << csv::format_number(mean[j]) << ','
            << csv::format_number(std::sqrt(cov(j, j))) << ',' << csv::format_number(l1) << '\n';
      out.metrics.emplace_back(mo.method + "_mean_x" + std::to_string(j + 1), mean[j]);
      out.metrics.emplace_back(mo.method + "_sd_x" + std::to_string(j + 1), std::sqrt(cov(j, j)));
      out.metrics.emplace_back(mo.method + "_kde_l1_x" + std::to_string(j + 1), l1);
    }
    if (reference_draws.rows() > 0) {
      mo.sliced_w2 = sliced_w2(mo.draws, reference_draws, {c.compare.projections, derive_seed(c.seed, kSeedSlices)});
      out.metrics.emplace_back(mo.method + "_sliced_w2", mo.sliced_w2);
    }
  }
  const MethodOutput* wgd = nullptr;
  const MethodOutput* gvb = nullptr;
  for (const auto& mo : out.methods) {
    if (mo.method == "wgd") wgd = &mo;
    if (mo.method == "gvb") gvb = &mo;
  }
  if (wgd && gvb && std::isfinite(wgd->sliced_w2) && wgd->sliced_w2 > 0.0)
    out.metrics.emplace_back("sliced_w2_ratio_gvb_over_wgd", gvb->sliced_w2 / wgd->sliced_w2);
  csv::write_metrics(c.out_dir / "compare_summary.csv", out.metrics);
  return out;
}

}  // namespace wgd
