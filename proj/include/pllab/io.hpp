#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pllab/engine.hpp"
#include "pllab/estimator.hpp"
#include "pllab/geometry.hpp"
#include "pllab/rates.hpp"

namespace pllab {

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write output file: " + path.string());
  out << std::setprecision(17);
  return out;
}

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  auto out = open_output(path);
  out << "k,f_gap,dist_sq,grad_norm\n";
  for (std::size_t i = 0; i < traj.size(); ++i)
    out << traj.ks[i] << "," << traj.f_gap[i] << "," << traj.dist_sq[i] << ","
        << traj.grad_norm[i] << "\n";
}

inline void write_trajectories_csv(const std::filesystem::path& path,
                                   const std::vector<Trajectory>& trajectories) {
  auto out = open_output(path);
  out << "replica,k,f_gap,dist_sq,grad_norm\n";
  for (std::size_t r = 0; r < trajectories.size(); ++r) {
    const Trajectory& traj = trajectories[r];
    for (std::size_t i = 0; i < traj.size(); ++i)
      out << r << "," << traj.ks[i] << "," << traj.f_gap[i] << "," << traj.dist_sq[i] << ","
          << traj.grad_norm[i] << "\n";
  }
}

inline void write_rate_curve_csv(const std::filesystem::path& path,
                                 const std::vector<RateCurvePoint>& curve) {
  auto out = open_output(path);
  out << "gamma,m,phi,stable\n";
  for (const RateCurvePoint& point : curve)
    out << point.gamma << "," << point.m_value << "," << point.phi_value << ","
        << (point.stable ? 1 : 0) << "\n";
}

struct SweepRow {
  double gamma = 0.0;
  double empirical_rate = 0.0;
  double theory_m = 0.0;
  double theory_phi = 0.0;
  Verdict verdict = Verdict::kInconclusive;
};

inline void write_sweep_csv(const std::filesystem::path& path,
                            const std::vector<SweepRow>& rows) {
  auto out = open_output(path);
  out << "gamma,empirical_rate,theory_m,theory_phi,verdict\n";
  for (const SweepRow& row : rows)
    out << row.gamma << "," << row.empirical_rate << "," << row.theory_m << ","
        << row.theory_phi << "," << to_string(row.verdict) << "\n";
}

inline void write_plot_csv(const std::filesystem::path& path, const std::vector<long>& ks,
                           const std::vector<double>& median_log_distsq,
                           const std::vector<double>& theory_log_line) {
  auto out = open_output(path);
  out << "k,median_log_distsq,theory_log_line\n";
  for (std::size_t i = 0; i < ks.size(); ++i)
    out << ks[i] << "," << median_log_distsq[i] << "," << theory_log_line[i] << "\n";
}

inline void write_contraction_csv(const std::filesystem::path& path,
                                  const ContractionReport& report) {
  auto out = open_output(path);
  out << "k,normsq_ratio,bound\n";
  for (const ContractionStep& step : report.steps)
    out << step.k << "," << step.ratio << "," << step.bound << "\n";
}

inline nlohmann::json to_json(const RateReport& report) {
  return nlohmann::json{{"empirical_rate", report.empirical_rate},
                        {"stderr", report.std_error},
                        {"iqr", report.iqr},
                        {"r_squared", report.r_squared},
                        {"theory_m", report.theory_m},
                        {"theory_phi", report.theory_phi},
                        {"gamma", report.gamma},
                        {"mu", report.mu},
                        {"L", report.L},
                        {"sigma", report.sigma},
                        {"verdict", to_string(report.verdict)},
                        {"n_replicas", report.n_replicas},
                        {"window",
                         {{"k_start", report.window_k_start}, {"k_end", report.window_k_end}}}};
}

inline nlohmann::json to_json(const SpectrumReport& report) {
  return nlohmann::json{{"eigenvalues", report.eigenvalues},
                        {"kernel_dim", report.kernel_dim},
                        {"mu_hat", report.mu_hat},
                        {"L_hat", report.L_hat},
                        {"tol", report.tol}};
}

inline nlohmann::json to_json(const ContractionReport& report) {
  return nlohmann::json{{"pass", report.pass},
                        {"bound", report.bound},
                        {"n_checked", report.n_checked},
                        {"n_violations", report.n_violations},
                        {"n_excluded", report.n_excluded}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& value) {
  auto out = open_output(path);
  out << value.dump(2) << "\n";
}

}  // namespace pllab
