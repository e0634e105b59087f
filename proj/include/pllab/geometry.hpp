#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pllab/jacobi.hpp"
#include "pllab/linalg.hpp"
#include "pllab/objectives.hpp"
#include "pllab/rates.hpp"
#include "pllab/rng.hpp"

namespace pllab {

/// Central differences of the analytic gradient, symmetrized. Used to
/// cross-check analytic Hessians and to cover objectives without one.
inline Matrix hessian_fd(const Objective& obj, const Vector& theta, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("hessian_fd: step must be positive");
  const Eigen::Index d = obj.dim();
  if (theta.size() != d) throw std::invalid_argument("hessian_fd: point has wrong dimension");
  Matrix hess(d, d);
  Vector probe = theta;
  for (Eigen::Index j = 0; j < d; ++j) {
    probe[j] = theta[j] + h;
    const Vector forward = obj.gradient(probe);
    probe[j] = theta[j] - h;
    const Vector backward = obj.gradient(probe);
    probe[j] = theta[j];
    hess.col(j) = (forward - backward) / (2.0 * h);
  }
  hess = 0.5 * (hess + hess.transpose());
  if (!hess.allFinite()) throw std::runtime_error("hessian_fd: non-finite entries");
  return hess;
}

/// Step balancing truncation against rounding for O(1) curvature.
inline double fd_step(const Vector& theta) { return 1e-5 * (1.0 + theta.norm()); }

struct SpectrumReport {
  std::vector<double> eigenvalues;  // ascending
  int kernel_dim = 0;               // count of |lambda| < tol
  double mu_hat = 0.0;              // smallest eigenvalue above tol
  double L_hat = 0.0;               // largest eigenvalue above tol
  double tol = 0.0;
};

/// Kernel threshold 1e-6 * max(1, ||H||_F): separates the exact-zero
/// tangent eigenvalues from O(1) curvatures by several orders of magnitude.
inline double default_kernel_tol(const Matrix& h) {
  return 1e-6 * std::max(1.0, h.norm());
}

/// Eigen-decomposition report via cyclic Jacobi rotations.
inline SpectrumReport spectrum(const Matrix& h, double tol) {
  if (!is_symmetric(h, 1e-10))
    throw std::invalid_argument("spectrum: matrix must be symmetric");
  SpectrumReport report;
  report.tol = tol;
  report.eigenvalues = jacobi_eigenvalues(h);
  bool have_nonzero = false;
  for (double ev : report.eigenvalues) {
    if (std::abs(ev) < tol) {
      ++report.kernel_dim;
      continue;
    }
    if (ev < tol) continue;  // negative beyond tol: listed but not mu_hat/L_hat
    if (!have_nonzero) {
      report.mu_hat = ev;
      have_nonzero = true;
    }
    report.L_hat = std::max(report.L_hat, ev);
  }
  return report;
}

inline SpectrumReport spectrum(const Matrix& h) { return spectrum(h, default_kernel_tol(h)); }

/// Smallest sampled PL ratio ||grad f||^2 / (2 (f - f_min)) over a ball.
/// Sample points whose gap is below 1e-12 are uninformative and skipped;
/// if every sample is skipped this is an error.
inline double pl_constant_estimate(const Objective& obj, const Vector& center, double radius,
                                   int samples, CounterRng& rng) {
  if (!(radius > 0.0)) throw std::invalid_argument("pl_constant_estimate: radius must be positive");
  if (samples < 1) throw std::invalid_argument("pl_constant_estimate: need at least one sample");
  if (center.size() != obj.dim())
    throw std::invalid_argument("pl_constant_estimate: center has wrong dimension");

  const double d = static_cast<double>(obj.dim());
  double best = std::numeric_limits<double>::infinity();
  bool informative = false;
  Vector direction(obj.dim());
  for (int s = 0; s < samples; ++s) {
    for (Eigen::Index i = 0; i < direction.size(); ++i) direction[i] = rng.next_gaussian();
    const double norm = direction.norm();
    if (norm == 0.0) continue;
    const double r = radius * std::pow(rng.next_unit(), 1.0 / d);
    const Vector theta = center + (r / norm) * direction;
    const double gap = obj.value(theta) - obj.min_value();
    if (gap < 1e-12) continue;
    best = std::min(best, obj.gradient(theta).squaredNorm() / (2.0 * gap));
    informative = true;
  }
  if (!informative)
    throw std::runtime_error("pl_constant_estimate: no informative samples (all gaps ~ 0)");
  return best;
}

/// Local coordinates adapted to a known minima manifold: tangent components
/// first, normal components last; the minima map into {normal part = 0}.
class Chart {
 public:
  virtual ~Chart() = default;
  virtual Eigen::Index dim() const = 0;
  virtual Eigen::Index normal_dim() const = 0;
  virtual Vector forward(const Vector& theta) const = 0;
  virtual bool in_domain(const Vector& theta) const = 0;

  Vector normal_part(const Vector& chart_coords) const {
    return chart_coords.tail(normal_dim());
  }
  double normal_norm_sq(const Vector& theta) const {
    return normal_part(forward(theta)).squaredNorm();
  }
};

/// Chart for the ring valley: (x, y, z) -> (angle, x, r - 1) with
/// r = sqrt(y^2 + z^2). Singular on the x-axis (r = 0), which is the
/// domain boundary.
class RingChart final : public Chart {
 public:
  Eigen::Index dim() const override { return 3; }
  Eigen::Index normal_dim() const override { return 2; }

  Vector forward(const Vector& theta) const override {
    if (theta.size() != 3) throw std::invalid_argument("RingChart: point has wrong dimension");
    Vector coords(3);
    coords[0] = std::atan2(theta[2], theta[1]);
    coords[1] = theta[0];
    coords[2] = std::hypot(theta[1], theta[2]) - 1.0;
    return coords;
  }

  bool in_domain(const Vector& theta) const override {
    return theta.size() == 3 && theta.allFinite() && std::hypot(theta[1], theta[2]) > 0.0;
  }
};

struct ContractionStep {
  long k;        // iterate index of the later point of the pair
  double ratio;  // n_k / n_{k-1}
  double bound;  // m(gamma) + eps
  bool ok;
};

struct ContractionReport {
  std::vector<ContractionStep> steps;
  long n_checked = 0;
  long n_violations = 0;
  long n_excluded = 0;  // pairs skipped: out of chart domain or below floor
  double bound = 0.0;
  bool pass = false;
};

namespace detail {

inline std::vector<double> chart_normal_sequence(const Chart& chart,
                                                 const std::vector<Vector>& iterates,
                                                 long* n_out_of_domain) {
  std::vector<double> norms;
  norms.reserve(iterates.size());
  for (const Vector& theta : iterates) {
    if (!chart.in_domain(theta)) {
      norms.push_back(std::numeric_limits<double>::quiet_NaN());
      if (n_out_of_domain) ++(*n_out_of_domain);
      continue;
    }
    norms.push_back(chart.normal_norm_sq(theta));
  }
  return norms;
}

/// Index of the last entry at or above the floor (the "convergent" range);
/// past it the sequence sits in denormal noise.
inline std::size_t convergent_end(const std::vector<double>& norms, double floor) {
  std::size_t end = 0;
  for (std::size_t i = 0; i < norms.size(); ++i)
    if (!std::isnan(norms[i]) && norms[i] >= floor) end = i;
  return end;
}

}  // namespace detail

/// Per-step contraction of the squared normal chart coordinate along a
/// deterministic trajectory of consecutive iterates:
///   n_k <= (m(gamma) + eps) * n_{k-1}
/// over the tail of the convergent range (defaults to its last 80%).
/// PASS requires every checked pair to satisfy the bound.
inline ContractionReport descent_contraction_check(const Chart& chart,
                                                   const std::vector<Vector>& iterates,
                                                   const SpectralParams& p, StepSize gamma,
                                                   double eps, double tail_fraction = 0.8,
                                                   double floor = 1e-250) {
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0))
    throw std::invalid_argument("descent_contraction_check: tail_fraction must be in (0, 1]");
  ContractionReport report;
  report.bound = m_rate(p, gamma) + eps;
  if (iterates.size() < 2) return report;

  long out_of_domain = 0;
  const auto norms = detail::chart_normal_sequence(chart, iterates, &out_of_domain);
  report.n_excluded += out_of_domain;

  const std::size_t last = detail::convergent_end(norms, floor);
  const auto first =
      static_cast<std::size_t>(std::ceil((1.0 - tail_fraction) * static_cast<double>(last)));
  for (std::size_t i = std::max<std::size_t>(first, 1); i <= last; ++i) {
    const double prev = norms[i - 1];
    const double cur = norms[i];
    if (std::isnan(prev) || std::isnan(cur) || prev < floor) {
      ++report.n_excluded;
      continue;
    }
    const double ratio = prev > 0.0 ? cur / prev : (cur > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    const bool ok = ratio <= report.bound;
    report.steps.push_back({static_cast<long>(i), ratio, report.bound, ok});
    ++report.n_checked;
    if (!ok) ++report.n_violations;
  }
  report.pass = report.n_checked > 0 && report.n_violations == 0;
  return report;
}

/// Ensemble-mean variant for stochastic runs: the bound is applied to the
/// pointwise mean of the squared normal coordinates with a standard-error
/// allowance (per-path per-step contraction does not hold for noisy runs):
///   mean_k <= (m + eps) * mean_{k-1} + se_multiplier * SE(mean_k).
inline ContractionReport descent_contraction_check_mean(
    const Chart& chart, const std::vector<std::vector<Vector>>& replica_iterates,
    const SpectralParams& p, StepSize gamma, double eps, double tail_fraction = 0.8,
    double floor = 1e-250, double se_multiplier = 3.0) {
  ContractionReport report;
  report.bound = m_rate(p, gamma) + eps;
  if (replica_iterates.empty()) return report;
  const std::size_t len = replica_iterates.front().size();
  for (const auto& path : replica_iterates)
    if (path.size() != len)
      throw std::invalid_argument("descent_contraction_check_mean: ragged replica iterates");
  if (len < 2) return report;

  const double n_rep = static_cast<double>(replica_iterates.size());
  std::vector<double> mean(len, 0.0);
  std::vector<double> se(len, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const auto& path : replica_iterates) {
      if (!chart.in_domain(path[i])) {
        mean[i] = std::numeric_limits<double>::quiet_NaN();
        break;
      }
      const double q = chart.normal_norm_sq(path[i]);
      sum += q;
      sum_sq += q * q;
    }
    if (std::isnan(mean[i])) {
      ++report.n_excluded;
      continue;
    }
    mean[i] = sum / n_rep;
    const double var = std::max(0.0, sum_sq / n_rep - mean[i] * mean[i]);
    se[i] = n_rep > 1.0 ? std::sqrt(var / (n_rep - 1.0)) : 0.0;
  }

  const std::size_t last = detail::convergent_end(mean, floor);
  const auto first =
      static_cast<std::size_t>(std::ceil((1.0 - tail_fraction) * static_cast<double>(last)));
  for (std::size_t i = std::max<std::size_t>(first, 1); i <= last; ++i) {
    const double prev = mean[i - 1];
    const double cur = mean[i];
    if (std::isnan(prev) || std::isnan(cur) || prev < floor) {
      ++report.n_excluded;
      continue;
    }
    const double allowance = se_multiplier * se[i];
    const double ratio = prev > 0.0 ? cur / prev : (cur > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    const bool ok = cur <= report.bound * prev + allowance;
    report.steps.push_back({static_cast<long>(i), ratio, report.bound, ok});
    ++report.n_checked;
    if (!ok) ++report.n_violations;
  }
  report.pass = report.n_checked > 0 && report.n_violations == 0;
  return report;
}

}  // namespace pllab
