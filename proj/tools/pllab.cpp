// pllab -- command-line laboratory for (S)GD convergence rates near minima
// manifolds under multiplicative gradient noise.
//
// Subcommands: rates | simulate | estimate | sweep | geometry.
// Exit codes: 0 all verdicts passing, 1 failing verdict, 2 usage/config
// error, 3 inconclusive.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pllab/config.hpp"
#include "pllab/engine.hpp"
#include "pllab/estimator.hpp"
#include "pllab/geometry.hpp"
#include "pllab/io.hpp"
#include "pllab/noise.hpp"
#include "pllab/objectives.hpp"
#include "pllab/rates.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInconclusive = 3;

struct Overrides {
  std::optional<double> gamma;
  std::optional<long> steps;
  std::optional<int> replicas;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool combined = false;
  int threads = 0;
};

struct Experiment {
  pllab::ExperimentConfig cfg;
  std::shared_ptr<pllab::Objective> objective;
  std::shared_ptr<pllab::NoiseModel> noise;
  pllab::Vector theta0;
  std::filesystem::path out_dir;
};

int verdict_exit_code(pllab::Verdict v) {
  if (v == pllab::Verdict::kInconclusive) return kExitInconclusive;
  return pllab::is_passing(v) ? kExitPass : kExitFail;
}

/// Output directory precedence: --out flag, then PLLAB_OUT, then the config.
std::filesystem::path resolve_out_dir(const pllab::OutputSpec& spec,
                                      const std::optional<std::string>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("PLLAB_OUT"); env && *env) return env;
  return spec.dir;
}

Experiment load_experiment(const std::string& path, const Overrides& ov) {
  Experiment exp;
  exp.cfg = pllab::ExperimentConfig::from(pllab::KvConfig::load(path));
  if (ov.gamma) {
    if (!(*ov.gamma > 0.0)) throw pllab::ConfigError("--gamma must be positive");
    exp.cfg.run.gammas = {*ov.gamma};
  }
  if (ov.steps) exp.cfg.run.steps = *ov.steps;
  if (ov.replicas) exp.cfg.run.replicas = *ov.replicas;
  if (ov.seed) exp.cfg.run.base_seed = *ov.seed;
  if (ov.combined) exp.cfg.output.combined = true;
  if (exp.cfg.run.steps < 1) throw pllab::ConfigError("[run] steps must be >= 1");
  if (exp.cfg.run.replicas < 1) throw pllab::ConfigError("[run] replicas must be >= 1");

  exp.objective = pllab::make_objective(exp.cfg.objective);
  exp.noise = pllab::make_noise(exp.cfg.noise, exp.objective);
  exp.theta0 = pllab::resolve_theta0(exp.cfg.run.theta0, *exp.objective);
  exp.out_dir = resolve_out_dir(exp.cfg.output, ov.out);
  return exp;
}

pllab::RunConfig make_run_config(const Experiment& exp, double gamma) {
  pllab::RunConfig rc;
  rc.gamma = pllab::StepSize(gamma);
  rc.steps = exp.cfg.run.steps;
  rc.replicas = exp.cfg.run.replicas;
  rc.base_seed = exp.cfg.run.base_seed;
  rc.record_every = exp.cfg.run.record_every;
  rc.theta0 = exp.theta0;
  return rc;
}

double single_gamma(const Experiment& exp, const char* cmd) {
  if (exp.cfg.run.gammas.size() != 1)
    throw pllab::ConfigError(std::string(cmd) + " requires a single gamma value");
  return exp.cfg.run.gammas.front();
}

/// Noise level for the theory comparison: the declared constant when the
/// model has one, otherwise a Monte Carlo estimate over probe points spread
/// around the starting point's projection.
double resolve_sigma(const Experiment& exp) {
  if (const auto nominal = exp.noise->nominal_sigma()) return *nominal;

  const pllab::Objective& obj = *exp.objective;
  pllab::Vector base = exp.theta0;
  if (const auto projected = obj.project_to_manifold(exp.theta0)) base = *projected;
  double scale = (exp.theta0 - base).norm();
  if (!(scale > 0.0)) scale = 1.0;

  pllab::CounterRng rng(exp.cfg.run.base_seed, 0x5157);
  std::vector<pllab::Vector> probes;
  const int n_probes = std::max(1, exp.cfg.estimator.sigma_probes);
  probes.reserve(static_cast<std::size_t>(n_probes));
  for (int i = 0; i < n_probes; ++i) {
    pllab::Vector direction(obj.dim());
    for (Eigen::Index j = 0; j < direction.size(); ++j) direction[j] = rng.next_gaussian();
    const double radius = (i % 2 == 0 ? 1.0 : 0.1) * scale;
    probes.push_back(base + (radius / direction.norm()) * direction);
  }
  const auto estimate = pllab::effective_sigma(
      *exp.noise, obj, probes, static_cast<int>(exp.cfg.estimator.sigma_draws), rng);
  std::cout << "sigma estimated empirically: effective_sigma = " << estimate.sigma_hat
            << " (stderr " << estimate.std_error << ")\n";
  return estimate.sigma_hat;
}

std::vector<double> parse_gamma_grid_flag(const std::string& grid,
                                          const std::vector<double>& list) {
  if (!grid.empty() && !list.empty())
    throw pllab::ConfigError("--gamma-grid and --gammas are mutually exclusive");
  if (!grid.empty()) return pllab::detail::parse_gamma_grid(grid);
  return list;
}

// ---------------------------------------------------------------------------

int cmd_rates(double mu, double l, double sigma, const std::string& grid_spec,
              const std::vector<double>& gammas, const std::string& csv_path) {
  const pllab::SpectralParams p(mu, l, sigma);
  const pllab::StepSize gamma_star = pllab::optimal_step(p);
  const pllab::PlOptimum phi_opt = pllab::pl_optimal(p);

  std::cout << std::setprecision(17);
  std::cout << "mu=" << p.mu << " L=" << p.L << " sigma=" << p.sigma << "\n";
  std::cout << "gamma_star=" << gamma_star.value << " m_star=" << pllab::optimal_rate(p) << "\n";
  std::cout << "gamma_phi=" << phi_opt.gamma.value << " phi_star=" << phi_opt.rate << "\n";
  std::cout << "branch_point=" << pllab::branch_point(p).value
            << " max_stable_step=" << pllab::max_stable_step(p).value << "\n";
  std::cout << "ratio=" << pllab::contraction_ratio(p) << "\n";

  const std::vector<double> grid = parse_gamma_grid_flag(grid_spec, gammas);
  if (!grid.empty()) {
    const auto curve = pllab::rate_curve(p, grid);
    if (!csv_path.empty()) {
      pllab::write_rate_curve_csv(csv_path, curve);
    } else {
      std::cout << "gamma,m,phi,stable\n";
      for (const auto& point : curve)
        std::cout << point.gamma << "," << point.m_value << "," << point.phi_value << ","
                  << (point.stable ? 1 : 0) << "\n";
    }
  }
  return kExitPass;
}

int cmd_simulate(const std::string& config_path, const Overrides& ov) {
  const Experiment exp = load_experiment(config_path, ov);
  const double gamma = single_gamma(exp, "simulate");
  const pllab::RunConfig rc = make_run_config(exp, gamma);

  auto trajectories = pllab::run_ensemble(*exp.objective, *exp.noise, rc, ov.threads);
  // Reference for dist_sq: each replica's own final iterate.
  for (auto& traj : trajectories)
    if (!traj.diverged()) pllab::fill_distances(traj, traj.theta_end);

  long diverged = 0;
  std::vector<double> final_gaps;
  for (const auto& traj : trajectories) {
    if (traj.diverged()) {
      ++diverged;
      continue;
    }
    final_gaps.push_back(traj.f_gap.back());
  }

  std::vector<std::string> files;
  if (exp.cfg.output.combined) {
    const auto path = exp.out_dir / "trajectories.csv";
    pllab::write_trajectories_csv(path, trajectories);
    files.push_back(path.string());
  } else {
    for (std::size_t r = 0; r < trajectories.size(); ++r) {
      std::ostringstream name;
      name << "traj_r" << std::setfill('0') << std::setw(4) << r << ".csv";
      const auto path = exp.out_dir / name.str();
      pllab::write_trajectory_csv(path, trajectories[r]);
      files.push_back(path.string());
    }
  }

  nlohmann::json summary{{"replicas", rc.replicas},
                         {"gamma", gamma},
                         {"steps", rc.steps},
                         {"diverged", diverged},
                         {"files", files}};
  if (!final_gaps.empty()) {
    std::sort(final_gaps.begin(), final_gaps.end());
    summary["final_f_gap"] = {{"min", final_gaps.front()},
                              {"median", final_gaps[final_gaps.size() / 2]},
                              {"max", final_gaps.back()}};
  }
  pllab::write_json(exp.out_dir / "summary.json", summary);
  std::cout << "replicas=" << rc.replicas << " diverged=" << diverged << "\n";
  return kExitPass;
}

void write_estimate_plot(const std::filesystem::path& path, const pllab::EnsembleAnalysis& ens,
                         long k_max, long window_start, double theory_m) {
  // Median over replicas of log dist_sq on the shared recording grid.
  const pllab::ReplicaAnalysis* reference = nullptr;
  for (const auto& a : ens.replicas)
    if (!a.traj.diverged()) {
      reference = &a;
      break;
    }
  if (!reference) return;

  std::vector<long> ks;
  std::vector<double> medians;
  for (std::size_t i = 0; i < reference->traj.ks.size(); ++i) {
    const long k = reference->traj.ks[i];
    if (k > k_max) break;
    std::vector<double> logs;
    for (const auto& a : ens.replicas) {
      if (a.traj.diverged() || i >= a.traj.dist_sq.size()) continue;
      const double value = a.traj.dist_sq[i];
      if (value > 0.0 && std::isfinite(value)) logs.push_back(std::log(value));
    }
    if (logs.empty()) continue;
    ks.push_back(k);
    medians.push_back(pllab::detail::quantile(logs, 0.5));
  }
  if (ks.empty()) return;

  // Theory line anchored at the first point inside the fit window.
  std::size_t anchor = 0;
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] >= window_start) {
      anchor = i;
      break;
    }
  const double log_m = std::log(theory_m);
  std::vector<double> line(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i)
    line[i] = medians[anchor] + static_cast<double>(ks[i] - ks[anchor]) * log_m;
  pllab::write_plot_csv(path, ks, medians, line);
}

int cmd_estimate(const std::string& config_path, const Overrides& ov) {
  const Experiment exp = load_experiment(config_path, ov);
  const double gamma = single_gamma(exp, "estimate");
  const pllab::RunConfig rc = make_run_config(exp, gamma);
  const double sigma = resolve_sigma(exp);
  const pllab::SpectralParams p = pllab::reference_params(*exp.objective, sigma);
  const auto opts = pllab::make_estimator_options(exp.cfg, ov.threads);

  const auto ensemble = pllab::estimate_rates(*exp.objective, *exp.noise, rc, p, opts);
  const pllab::RateReport& report = ensemble.report;

  pllab::write_json(exp.out_dir / "report.json", pllab::to_json(report));
  if (report.theory_m > 0.0)
    write_estimate_plot(exp.out_dir / "plot.csv", ensemble, rc.steps, report.window_k_start,
                        report.theory_m);

  std::cout << "verdict=" << pllab::to_string(report.verdict)
            << " empirical_rate=" << report.empirical_rate << " theory_m=" << report.theory_m
            << " diverged=" << ensemble.n_diverged << "\n";
  return verdict_exit_code(report.verdict);
}

int cmd_sweep(const std::string& config_path, const Overrides& ov) {
  const Experiment exp = load_experiment(config_path, ov);
  if (exp.cfg.run.gammas.empty()) throw pllab::ConfigError("sweep requires a gamma grid");
  const double sigma = resolve_sigma(exp);
  const pllab::SpectralParams p = pllab::reference_params(*exp.objective, sigma);
  const auto opts = pllab::make_estimator_options(exp.cfg, ov.threads);
  const double stable_limit = pllab::max_stable_step(p).value;

  std::vector<pllab::SweepRow> rows;
  int exit_code = kExitPass;
  for (double gamma : exp.cfg.run.gammas) {
    const pllab::RunConfig rc = make_run_config(exp, gamma);
    const auto ensemble = pllab::estimate_rates(*exp.objective, *exp.noise, rc, p, opts);
    pllab::SweepRow row;
    row.gamma = gamma;
    row.empirical_rate = ensemble.report.empirical_rate;
    row.theory_m = ensemble.report.theory_m;
    row.theory_phi = ensemble.report.theory_phi;
    row.verdict = ensemble.report.verdict;
    rows.push_back(row);
    // Unstable grid points are expected to diverge; only stable ones gate
    // the exit code.
    if (gamma < stable_limit) exit_code = std::max(exit_code, verdict_exit_code(row.verdict));
    std::cout << "gamma=" << gamma << " verdict=" << pllab::to_string(row.verdict)
              << " empirical_rate=" << row.empirical_rate << "\n";
  }
  pllab::write_sweep_csv(exp.out_dir / "sweep.csv", rows);
  return exit_code;
}

int cmd_geometry(const std::string& config_path, const Overrides& ov) {
  const Experiment exp = load_experiment(config_path, ov);
  const double gamma = single_gamma(exp, "geometry");
  pllab::RunConfig rc = make_run_config(exp, gamma);
  rc.replicas = 1;

  pllab::RunConfig extended = rc;
  extended.steps = rc.steps * 2;
  const auto extended_traj = pllab::run(*exp.objective, *exp.noise, extended, 0);
  pllab::LimitOptions limit_opts;
  limit_opts.snap_to_manifold = exp.cfg.estimator.snap_limit;
  const auto limit = pllab::estimate_limit(*exp.objective, extended_traj, limit_opts);
  if (!limit.converged) {
    std::cout << "limit estimation inconclusive (grad_norm=" << limit.grad_norm << ")\n";
    return kExitInconclusive;
  }

  const auto analytic = exp.objective->hessian(limit.theta_inf);
  const pllab::Matrix hess = analytic
                                 ? *analytic
                                 : pllab::hessian_fd(*exp.objective, limit.theta_inf,
                                                     pllab::fd_step(limit.theta_inf));
  const auto spectrum_report = pllab::spectrum(hess);

  pllab::CounterRng pl_rng(exp.cfg.run.base_seed, 0x77);
  const double pl_estimate =
      pllab::pl_constant_estimate(*exp.objective, limit.theta_inf, exp.cfg.geometry.tube_radius,
                                  exp.cfg.geometry.pl_samples, pl_rng);

  nlohmann::json result{{"spectrum", pllab::to_json(spectrum_report)},
                        {"pl_estimate", pl_estimate},
                        {"grad_norm", limit.grad_norm},
                        {"snapped", limit.snapped},
                        {"contraction", nullptr}};

  if (dynamic_cast<const pllab::RingValleyObjective*>(exp.objective.get())) {
    pllab::RunConfig dense = rc;
    dense.record_every = 1;  // the contraction check needs consecutive iterates
    const auto traj = pllab::run(*exp.objective, *exp.noise, dense, 0);
    const auto local = pllab::local_spectrum(*exp.objective, limit.theta_inf, 1e-8);
    const double sigma = exp.noise->nominal_sigma().value_or(0.0);
    const pllab::SpectralParams p(local.mu, local.L, sigma);
    const pllab::RingChart chart;
    const auto contraction = pllab::descent_contraction_check(
        chart, traj.thetas, p, pllab::StepSize(gamma), exp.cfg.geometry.contraction_eps,
        exp.cfg.geometry.tail_fraction);
    result["contraction"] = pllab::to_json(contraction);
    pllab::write_contraction_csv(exp.out_dir / "contraction.csv", contraction);
  }

  pllab::write_json(exp.out_dir / "geometry.json", result);
  std::cout << "kernel_dim=" << spectrum_report.kernel_dim << " mu_hat=" << spectrum_report.mu_hat
            << " L_hat=" << spectrum_report.L_hat << " pl_estimate=" << pl_estimate << "\n";
  return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for (S)GD convergence rates under local PL conditions"};
  app.require_subcommand(1);

  // rates
  double mu = 1.0;
  double l = 1.0;
  double sigma = 0.0;
  std::string grid_spec;
  std::vector<double> gammas;
  std::string csv_path;
  auto* rates = app.add_subcommand("rates", "closed-form rate summary and sweep table");
  rates->add_option("--mu", mu, "lower curvature bound")->required();
  rates->add_option("--L", l, "upper curvature bound")->required();
  rates->add_option("--sigma", sigma, "multiplicative noise level")->required();
  rates->add_option("--gamma-grid", grid_spec, "step-size grid min:max:count");
  rates->add_option("--gammas", gammas, "explicit step-size list")->delimiter(',');
  rates->add_option("--csv", csv_path, "write the sweep table to this file");

  // config-driven subcommands
  Overrides ov;
  std::string config_path;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("config", config_path, "experiment config file")->required();
    cmd->add_option("--gamma", [&ov](const CLI::results_t& r) {
      ov.gamma = std::stod(r[0]);
      return true;
    }, "override the step size");
    cmd->add_option("--steps", [&ov](const CLI::results_t& r) {
      ov.steps = std::stol(r[0]);
      return true;
    }, "override the iteration count");
    cmd->add_option("--replicas", [&ov](const CLI::results_t& r) {
      ov.replicas = std::stoi(r[0]);
      return true;
    }, "override the replica count");
    cmd->add_option("--seed", [&ov](const CLI::results_t& r) {
      ov.seed = std::stoull(r[0]);
      return true;
    }, "override the base seed");
    cmd->add_option("--out", [&ov](const CLI::results_t& r) {
      ov.out = r[0];
      return true;
    }, "output directory (overrides config and PLLAB_OUT)");
    cmd->add_option("--threads", ov.threads, "worker threads (0 = hardware)");
  };

  auto* simulate = app.add_subcommand("simulate", "run an ensemble and dump trajectories");
  add_common(simulate);
  simulate->add_flag("--combined", ov.combined, "single CSV with a replica column");

  auto* estimate = app.add_subcommand("estimate", "fit empirical rates and compare to theory");
  add_common(estimate);

  auto* sweep = app.add_subcommand("sweep", "rate estimation over a step-size grid");
  add_common(sweep);

  auto* geometry = app.add_subcommand("geometry", "Hessian spectrum, PL and contraction checks");
  add_common(geometry);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (rates->parsed()) return cmd_rates(mu, l, sigma, grid_spec, gammas, csv_path);
    if (simulate->parsed()) return cmd_simulate(config_path, ov);
    if (estimate->parsed()) return cmd_estimate(config_path, ov);
    if (sweep->parsed()) return cmd_sweep(config_path, ov);
    if (geometry->parsed()) return cmd_geometry(config_path, ov);
  } catch (const pllab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
