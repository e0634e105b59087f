// Test-only oracles, independent of the implementation paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pllab/linalg.hpp"
#include "pllab/objectives.hpp"

namespace testsupport {

/// Central-difference gradient of f itself (independent of any analytic
/// gradient or of the FD-of-gradient Hessian path).
inline pllab::Vector fd_gradient(const pllab::Objective& obj, const pllab::Vector& theta,
                                 double h) {
  pllab::Vector grad(theta.size());
  pllab::Vector probe = theta;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    probe[j] = theta[j] + h;
    const double forward = obj.value(probe);
    probe[j] = theta[j] - h;
    const double backward = obj.value(probe);
    probe[j] = theta[j];
    grad[j] = (forward - backward) / (2.0 * h);
  }
  return grad;
}

// --- Sturm-sequence bisection eigenvalue oracle ---------------------------
//
// Householder tridiagonalization followed by bisection on the Sturm count.
// Deliberately shares no code with the Jacobi implementation.

struct Tridiagonal {
  std::vector<double> diag;
  std::vector<double> off;  // off[i] couples i and i+1
};

inline Tridiagonal householder_tridiagonalize(pllab::Matrix a) {
  const Eigen::Index n = a.rows();
  Tridiagonal t;
  t.diag.resize(static_cast<std::size_t>(n));
  t.off.assign(static_cast<std::size_t>(std::max<Eigen::Index>(n - 1, 0)), 0.0);
  for (Eigen::Index k = 0; k < n - 2; ++k) {
    pllab::Vector x = a.col(k).segment(k + 1, n - k - 1);
    const double alpha = -std::copysign(x.norm(), x[0] == 0.0 ? 1.0 : x[0]);
    if (x.norm() == 0.0) continue;
    pllab::Vector v = x;
    v[0] -= alpha;
    const double vnorm = v.norm();
    if (vnorm == 0.0) continue;
    v /= vnorm;
    // A <- H A H with H = I - 2 v v^T acting on the trailing block
    auto block = a.block(k + 1, k + 1, n - k - 1, n - k - 1);
    const pllab::Vector w = block * v;
    const double c = v.dot(w);
    block -= 2.0 * (v * w.transpose() + w * v.transpose()) - 4.0 * c * (v * v.transpose());
    a.col(k).segment(k + 1, n - k - 1).setZero();
    a.row(k).segment(k + 1, n - k - 1).setZero();
    a(k + 1, k) = a(k, k + 1) = alpha;
  }
  for (Eigen::Index i = 0; i < n; ++i) t.diag[static_cast<std::size_t>(i)] = a(i, i);
  for (Eigen::Index i = 0; i + 1 < n; ++i) t.off[static_cast<std::size_t>(i)] = a(i + 1, i);
  return t;
}

/// Number of eigenvalues of the tridiagonal matrix strictly below x.
inline int sturm_count(const Tridiagonal& t, double x) {
  int count = 0;
  double q = 1.0;
  const std::size_t n = t.diag.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double off_sq = i == 0 ? 0.0 : t.off[i - 1] * t.off[i - 1];
    q = t.diag[i] - x - (i == 0 ? 0.0 : off_sq / q);
    if (q == 0.0) q = -1e-300;
    if (q < 0.0) ++count;
  }
  return count;
}

/// All eigenvalues by bisection on the Sturm count, ascending.
inline std::vector<double> sturm_eigenvalues(const pllab::Matrix& a, double tol = 1e-12) {
  const Eigen::Index n = a.rows();
  const Tridiagonal t = householder_tridiagonalize(a);
  // Gershgorin bounds
  double lo = t.diag[0];
  double hi = t.diag[0];
  for (std::size_t i = 0; i < t.diag.size(); ++i) {
    const double left = i > 0 ? std::abs(t.off[i - 1]) : 0.0;
    const double right = i + 1 < t.diag.size() ? std::abs(t.off[i]) : 0.0;
    lo = std::min(lo, t.diag[i] - left - right);
    hi = std::max(hi, t.diag[i] + left + right);
  }
  const double scale = std::max({1.0, std::abs(lo), std::abs(hi)});
  std::vector<double> eigenvalues;
  eigenvalues.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index idx = 0; idx < n; ++idx) {
    double a_lo = lo - scale * 1e-10;
    double a_hi = hi + scale * 1e-10;
    // find the idx-th smallest eigenvalue: smallest x with count(x) >= idx+1
    while (a_hi - a_lo > tol * scale) {
      const double mid = 0.5 * (a_lo + a_hi);
      if (sturm_count(t, mid) >= static_cast<int>(idx) + 1)
        a_hi = mid;
      else
        a_lo = mid;
    }
    eigenvalues.push_back(0.5 * (a_lo + a_hi));
  }
  return eigenvalues;
}

// --- Exact moments for the sharp-noise quadratic --------------------------
//
// With shared eta_i = +-sqrt(sigma/2) per step and theta_0 decomposed over
// the eigenbasis with squared coefficients c2_j on eigenvalues lambda_j:
//   ||theta_k||^2 = sum_j c2_j prod_i f_j(eta_i)^2,
//   f_j(eta) = 1 - gamma*lambda_j - gamma*eta*sqrt(lambda_j),
// so both E||theta_k||^2 and E||theta_k||^4 factor over steps in closed form.

struct SharpMoments {
  double mean;
  double std_error;  // of the mean over `replicas` i.i.d. paths
};

inline SharpMoments sharp_quadratic_moments(const std::vector<double>& lambdas,
                                            const std::vector<double>& c2, double sigma,
                                            double gamma, long k, long replicas) {
  if (lambdas.size() != c2.size()) throw std::invalid_argument("sharp_quadratic_moments");
  const double s = std::sqrt(0.5 * sigma);
  const std::size_t d = lambdas.size();
  auto factor = [&](std::size_t j, double eta) {
    return 1.0 - gamma * lambdas[j] - gamma * eta * std::sqrt(lambdas[j]);
  };
  double mean = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double fp = factor(j, s);
    const double fm = factor(j, -s);
    mean += c2[j] * std::pow(0.5 * (fp * fp + fm * fm), static_cast<double>(k));
  }
  double second = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t l = 0; l < d; ++l) {
      const double pp = factor(j, s) * factor(l, s);
      const double mm = factor(j, -s) * factor(l, -s);
      const double q = 0.5 * (pp * pp + mm * mm);
      second += c2[j] * c2[l] * std::pow(q, static_cast<double>(k));
    }
  }
  const double var = std::max(0.0, second - mean * mean);
  return {mean, std::sqrt(var / static_cast<double>(replicas))};
}

}  // namespace testsupport
