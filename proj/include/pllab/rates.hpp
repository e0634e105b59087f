#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace pllab {

/// Curvature/noise triple describing a regular minimum: mu is the local PL
/// constant, L the local smoothness constant, and sigma the multiplicative
/// noise level in E[||D||^2 | theta] <= sigma * (f(theta) - f_min).
struct SpectralParams {
  double mu;
  double L;
  double sigma;

  SpectralParams(double mu_in, double l_in, double sigma_in)
      : mu(mu_in), L(l_in), sigma(sigma_in) {
    if (!(mu > 0.0) || !std::isfinite(mu))
      throw std::invalid_argument("SpectralParams: mu must be positive");
    if (!(L >= mu) || !std::isfinite(L))
      throw std::invalid_argument("SpectralParams: need mu <= L");
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
      throw std::invalid_argument("SpectralParams: sigma must be nonnegative");
  }

  double condition_number() const { return L / mu; }
};

/// Step size. Zero is allowed as a degenerate no-op step; negative or
/// non-finite values are rejected.
struct StepSize {
  double value;

  explicit StepSize(double v) : value(v) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("StepSize: must be a nonnegative finite real");
  }
};

/// One curvature branch of the squared-distance contraction factor:
/// (1 - g*lambda)^2 + g^2 * sigma * lambda / 2.
inline double m_rate_branch(double lambda, double sigma, double gamma) {
  const double a = 1.0 - gamma * lambda;
  return a * a + 0.5 * gamma * gamma * sigma * lambda;
}

/// Sharp asymptotic contraction factor of the squared distance per step,
/// the maximum of the mu- and L-branches. Always nonnegative.
inline double m_rate(const SpectralParams& p, StepSize gamma) {
  return std::max(m_rate_branch(p.mu, p.sigma, gamma.value),
                  m_rate_branch(p.L, p.sigma, gamma.value));
}

/// Step size at which the two branches of m cross: 2 / (L + mu + sigma/2).
/// Below it the mu-branch dominates, above it the L-branch does.
inline StepSize branch_point(const SpectralParams& p) {
  return StepSize(2.0 / (p.L + p.mu + 0.5 * p.sigma));
}

/// Stability threshold: m(gamma) < 1 iff gamma < 2 / (L + sigma/2),
/// with equality m = 1 exactly at the threshold.
inline StepSize max_stable_step(const SpectralParams& p) {
  return StepSize(2.0 / (p.L + 0.5 * p.sigma));
}

/// Global minimizer of m over gamma > 0:
/// min(1/(mu + sigma/2), 2/(L + mu + sigma/2)); the first expression is
/// the active one iff sigma >= 2(L - mu).
inline StepSize optimal_step(const SpectralParams& p) {
  if (p.sigma >= 2.0 * (p.L - p.mu)) return StepSize(1.0 / (p.mu + 0.5 * p.sigma));
  return branch_point(p);
}

/// m at the optimal step, in closed form. Lies in [0, 1).
inline double optimal_rate(const SpectralParams& p) {
  if (p.sigma >= 2.0 * (p.L - p.mu)) return p.sigma / (2.0 * (p.mu + 0.5 * p.sigma));
  const double gap = p.L - p.mu;
  const double den = p.L + p.mu + 0.5 * p.sigma;
  return (gap * gap + p.sigma * (p.L + p.mu) + 0.25 * p.sigma * p.sigma) / (den * den);
}

/// Classical PL-based contraction factor of the objective gap:
/// 1 - 2*mu*g + g^2 * L * (2*mu + sigma) / 2.
inline double pl_rate(const SpectralParams& p, StepSize gamma) {
  const double g = gamma.value;
  return 1.0 - 2.0 * p.mu * g + 0.5 * g * g * p.L * (2.0 * p.mu + p.sigma);
}

struct PlOptimum {
  StepSize gamma;
  double rate;
};

/// Minimizer of the PL-based factor and its value:
/// gamma = 2*mu / (L*(2*mu + sigma)), value = 1 - 2*mu^2 / (L*(2*mu + sigma)).
inline PlOptimum pl_optimal(const SpectralParams& p) {
  const double den = p.L * (2.0 * p.mu + p.sigma);
  return {StepSize(2.0 * p.mu / den), 1.0 - 2.0 * p.mu * p.mu / den};
}

/// Relative contraction per iteration at the respective optimal steps,
/// (1 - m*) / (1 - phi*), via the closed-form regimes in kappa = L/mu:
/// kappa when kappa <= 1 + sigma/(2*mu), else
/// 4*kappa^2*(1 + sigma/(2*mu)) / (kappa + 1 + sigma/(2*mu))^2.
/// Equals 1 iff kappa = 1; approaches 4*(1 + sigma/(2*mu)) as kappa -> inf.
inline double contraction_ratio(const SpectralParams& p) {
  const double kappa = p.L / p.mu;
  const double s = 1.0 + 0.5 * p.sigma / p.mu;
  if (kappa <= s) return kappa;
  const double sum = kappa + s;
  return 4.0 * kappa * kappa * s / (sum * sum);
}

/// One row of a step-size sweep of the closed-form rates.
struct RateCurvePoint {
  double gamma;
  double m_value;
  double phi_value;
  bool stable;  // m_value < 1
};

inline std::vector<RateCurvePoint> rate_curve(const SpectralParams& p,
                                              const std::vector<double>& gammas) {
  std::vector<RateCurvePoint> curve;
  curve.reserve(gammas.size());
  for (double g : gammas) {
    const StepSize step(g);
    const double m = m_rate(p, step);
    curve.push_back({g, m, pl_rate(p, step), m < 1.0});
  }
  return curve;
}

}  // namespace pllab
