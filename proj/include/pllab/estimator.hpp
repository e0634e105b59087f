#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pllab/engine.hpp"
#include "pllab/rates.hpp"

namespace pllab {

/// Iteration window plus residual filters for the log-linear rate fit.
/// Points below `floor` are excluded (denormal pollution); points below
/// headroom * (final residual of the series) are excluded because the
/// limit-estimation bias is of the order of that final residual.
struct FitWindow {
  long k_start = 0;
  long k_end = 0;
  double floor = 1e-200;
  double headroom = 1e4;
};

struct FitResult {
  double rate = std::numeric_limits<double>::quiet_NaN();  // exp(slope)
  double std_error = std::numeric_limits<double>::quiet_NaN();
  double r_squared = std::numeric_limits<double>::quiet_NaN();
  long n_used = 0;
  long n_dropped = 0;  // non-positive residuals inside the window
  bool ok = false;
  std::string reason;
};

/// Ordinary least squares of log(residual) against k over the window.
/// The fitted per-step factor of the residual sequence is exp(slope); its
/// standard error comes from the slope standard error by the delta method.
/// Fewer than 10 usable points is an inconclusive (not exceptional) result.
inline FitResult fit_loglinear(const std::vector<long>& ks, const std::vector<double>& values,
                               const FitWindow& window) {
  if (ks.size() != values.size())
    throw std::invalid_argument("fit_loglinear: index/value size mismatch");
  FitResult fit;
  const double final_residual = values.empty() ? 0.0 : values.back();
  const double cutoff = std::isfinite(final_residual) && final_residual > 0.0
                            ? std::max(window.floor, window.headroom * final_residual)
                            : window.floor;

  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < window.k_start || ks[i] > window.k_end) continue;
    const double r = values[i];
    if (std::isnan(r)) continue;
    if (!(r > 0.0)) {
      ++fit.n_dropped;  // exact hit of the limit: dropped, not clamped
      continue;
    }
    if (r < cutoff) continue;
    xs.push_back(static_cast<double>(ks[i]));
    ys.push_back(std::log(r));
  }
  fit.n_used = static_cast<long>(xs.size());
  if (fit.n_used < 10) {
    fit.reason = "fewer than 10 usable points in fit window";
    return fit;
  }

  const double n = static_cast<double>(xs.size());
  double mean_x = 0.0;
  double mean_y = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mean_x += xs[i];
    mean_y += ys[i];
  }
  mean_x /= n;
  mean_y /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mean_x;
    const double dy = ys[i] - mean_y;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  const double slope = sxy / sxx;
  const double rss = std::max(0.0, syy - slope * sxy);
  const double slope_var = rss / (n - 2.0) / sxx;

  fit.rate = std::exp(slope);
  fit.std_error = fit.rate * std::sqrt(slope_var);
  // near-constant series: syy is pure summation noise, the fit is exact
  const double syy_noise = 1e-24 * n * (1.0 + mean_y * mean_y);
  fit.r_squared = syy > syy_noise ? 1.0 - rss / syy : 1.0;
  fit.ok = true;
  return fit;
}

struct LimitOptions {
  double grad_tol = 1e-10;  // scaled by (1 + ||theta||)
  bool snap_to_manifold = true;
  double snap_tol = 1e-8;
};

struct LimitEstimate {
  Vector theta_inf;
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  bool snapped = false;
};

/// Limit point taken from the final iterate of a run extended well past the
/// fit horizon. Snaps to the known minima manifold when the final iterate
/// is within snap_tol of it.
inline LimitEstimate estimate_limit(const Objective& obj, const Trajectory& extended,
                                    const LimitOptions& opts = {}) {
  LimitEstimate est;
  est.theta_inf = extended.theta_end;
  if (extended.diverged()) return est;

  if (opts.snap_to_manifold) {
    if (const auto projected = obj.project_to_manifold(est.theta_inf)) {
      if ((est.theta_inf - *projected).norm() <= opts.snap_tol) {
        est.theta_inf = *projected;
        est.snapped = true;
      }
    }
  }
  est.grad_norm = obj.gradient(est.theta_inf).norm();
  est.converged = est.grad_norm <= opts.grad_tol * (1.0 + est.theta_inf.norm());
  return est;
}

enum class Verdict { kMatchesM, kBelowM, kAboveMWithinEps, kInconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kMatchesM: return "MATCHES_M";
    case Verdict::kBelowM: return "BELOW_M";
    case Verdict::kAboveMWithinEps: return "ABOVE_M_WITHIN_EPS";
    case Verdict::kInconclusive: return "INCONCLUSIVE";
  }
  return "INCONCLUSIVE";
}

/// MATCHES_M and BELOW_M are passing outcomes (the theory is an upper
/// bound); ABOVE_M_WITHIN_EPS is a failure; INCONCLUSIVE means no usable fit.
inline bool is_passing(Verdict v) {
  return v == Verdict::kMatchesM || v == Verdict::kBelowM;
}

struct VerdictBands {
  double eps_tol = 0.02;   // |rate - m| band counted as a match
  double eps_band = 0.05;  // excess above m still reported as within-epsilon
};

struct RateReport {
  double empirical_rate = std::numeric_limits<double>::quiet_NaN();
  double std_error = std::numeric_limits<double>::quiet_NaN();
  double iqr = std::numeric_limits<double>::quiet_NaN();
  double r_squared = std::numeric_limits<double>::quiet_NaN();
  double theory_m = 0.0;
  double theory_phi = 0.0;
  double gamma = 0.0;
  double mu = 0.0;
  double L = 0.0;
  double sigma = 0.0;
  Verdict verdict = Verdict::kInconclusive;
  int n_replicas = 0;
  long window_k_start = 0;
  long window_k_end = 0;
};

namespace detail {

inline double quantile(std::vector<double> sorted_values, double q) {
  if (sorted_values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(sorted_values.begin(), sorted_values.end());
  const double pos = q * (static_cast<double>(sorted_values.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted_values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac;
}

}  // namespace detail

/// Median-aggregates per-replica fits and compares against m(gamma).
/// The median rate within +-eps_tol of m is MATCHES_M; strictly below is
/// BELOW_M; above by at most eps_band is ABOVE_M_WITHIN_EPS; anything else
/// (including no successful fit) is INCONCLUSIVE.
inline RateReport aggregate(const std::vector<FitResult>& fits, const SpectralParams& p,
                            StepSize gamma, const VerdictBands& bands = {},
                            long window_k_start = 0, long window_k_end = 0) {
  RateReport report;
  report.theory_m = m_rate(p, gamma);
  report.theory_phi = pl_rate(p, gamma);
  report.gamma = gamma.value;
  report.mu = p.mu;
  report.L = p.L;
  report.sigma = p.sigma;
  report.n_replicas = static_cast<int>(fits.size());
  report.window_k_start = window_k_start;
  report.window_k_end = window_k_end;

  std::vector<double> rates;
  std::vector<double> errors;
  std::vector<double> r2s;
  for (const FitResult& f : fits) {
    if (!f.ok) continue;
    rates.push_back(f.rate);
    errors.push_back(f.std_error);
    r2s.push_back(f.r_squared);
  }
  if (rates.empty()) {
    report.verdict = Verdict::kInconclusive;
    return report;
  }

  report.empirical_rate = detail::quantile(rates, 0.5);
  report.iqr = detail::quantile(rates, 0.75) - detail::quantile(rates, 0.25);
  report.std_error = detail::quantile(errors, 0.5);
  report.r_squared = detail::quantile(r2s, 0.5);

  const double m = report.theory_m;
  const double rate = report.empirical_rate;
  if (rate < m - bands.eps_tol) {
    report.verdict = Verdict::kBelowM;
  } else if (rate <= m + bands.eps_tol) {
    report.verdict = Verdict::kMatchesM;
  } else if (rate <= m + bands.eps_band) {
    report.verdict = Verdict::kAboveMWithinEps;
  } else {
    report.verdict = Verdict::kInconclusive;
  }
  return report;
}

struct EstimatorOptions {
  std::optional<long> k_start;  // default: steps / 10
  std::optional<long> k_end;    // default: steps
  double floor = 1e-200;
  double headroom = 1e4;
  VerdictBands bands;
  LimitOptions limit;
  int threads = 0;
};

struct ReplicaAnalysis {
  Trajectory traj;  // extended to 2x steps, distances filled on success
  LimitEstimate limit;
  FitResult dist_fit;
  FitResult gap_fit;
};

inline FitWindow make_fit_window(const RunConfig& cfg, const EstimatorOptions& opts) {
  FitWindow window;
  window.k_start = opts.k_start.value_or(cfg.steps / 10);
  window.k_end = opts.k_end.value_or(cfg.steps);
  window.floor = opts.floor;
  window.headroom = opts.headroom;
  if (window.k_start >= window.k_end)
    throw std::invalid_argument("EstimatorOptions: fit window is empty");
  return window;
}

/// Runs one replica for 2x the nominal horizon, estimates its limit from
/// the extension, and fits the squared-distance and objective-gap rates
/// over the nominal window.
inline ReplicaAnalysis analyze_replica(const Objective& obj, const NoiseModel& noise,
                                       const RunConfig& cfg, int replica,
                                       const EstimatorOptions& opts = {}) {
  const FitWindow window = make_fit_window(cfg, opts);
  RunConfig extended = cfg;
  extended.steps = cfg.steps * 2;

  ReplicaAnalysis analysis;
  analysis.traj = run(obj, noise, extended, replica);
  analysis.limit = estimate_limit(obj, analysis.traj, opts.limit);
  if (analysis.traj.diverged()) {
    analysis.dist_fit.reason = analysis.gap_fit.reason = "run diverged";
    return analysis;
  }
  if (!analysis.limit.converged) {
    analysis.dist_fit.reason = analysis.gap_fit.reason =
        "limit estimate fails the gradient tolerance";
    return analysis;
  }
  fill_distances(analysis.traj, analysis.limit.theta_inf);
  analysis.dist_fit = fit_loglinear(analysis.traj.ks, analysis.traj.dist_sq, window);
  analysis.gap_fit = fit_loglinear(analysis.traj.ks, analysis.traj.f_gap, window);
  return analysis;
}

struct EnsembleAnalysis {
  std::vector<ReplicaAnalysis> replicas;
  RateReport report;  // fitted on squared distances
  long n_diverged = 0;
};

/// Full pipeline: per-replica analysis in parallel, then median aggregation
/// of the squared-distance rates against the given theory parameters.
inline EnsembleAnalysis estimate_rates(const Objective& obj, const NoiseModel& noise,
                                       const RunConfig& cfg, const SpectralParams& theory,
                                       const EstimatorOptions& opts = {}) {
  const FitWindow window = make_fit_window(cfg, opts);
  EnsembleAnalysis ensemble;
  ensemble.replicas.resize(static_cast<std::size_t>(cfg.replicas));
  detail::parallel_indexed(cfg.replicas, opts.threads, [&](int r) {
    ensemble.replicas[static_cast<std::size_t>(r)] = analyze_replica(obj, noise, cfg, r, opts);
  });
  std::vector<FitResult> fits;
  fits.reserve(ensemble.replicas.size());
  for (const ReplicaAnalysis& a : ensemble.replicas) {
    fits.push_back(a.dist_fit);
    if (a.traj.diverged()) ++ensemble.n_diverged;
  }
  ensemble.report =
      aggregate(fits, theory, cfg.gamma, opts.bands, window.k_start, window.k_end);
  return ensemble;
}

}  // namespace pllab
