#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pllab/linalg.hpp"

namespace pllab {

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method
/// (Rutishauser rotations). Each sweep annihilates every off-diagonal
/// entry once; sweeps repeat until the off-diagonal Frobenius norm drops
/// below 1e-13 * ||H||_F. Adequate up to a few hundred dimensions.
inline std::vector<double> jacobi_eigenvalues(Matrix h, int max_sweeps = 100) {
  const Eigen::Index n = h.rows();
  if (n == 0 || h.cols() != n)
    throw std::invalid_argument("jacobi_eigenvalues: matrix must be square and nonempty");

  const double norm = h.norm();
  const double off_target = 1e-13 * norm;

  auto off_norm = [&h, n]() {
    double s = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) s += h(p, q) * h(p, q);
    return std::sqrt(2.0 * s);
  };

  int sweep = 0;
  while (off_norm() > off_target) {
    if (++sweep > max_sweeps)
      throw std::runtime_error("jacobi_eigenvalues: no convergence (is the matrix symmetric?)");
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = h(p, q);
        const double small = 100.0 * std::abs(apq);
        if (std::abs(h(p, p)) + small == std::abs(h(p, p)) &&
            std::abs(h(q, q)) + small == std::abs(h(q, q))) {
          h(p, q) = h(q, p) = 0.0;
          continue;
        }
        if (apq == 0.0) continue;

        const double diff = h(q, q) - h(p, p);
        double t;
        if (std::abs(diff) + small == std::abs(diff)) {
          t = apq / diff;
        } else {
          const double theta = 0.5 * diff / apq;
          t = 1.0 / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
          if (theta < 0.0) t = -t;
        }
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        const double tau = s / (1.0 + c);
        const double shift = t * apq;

        h(p, p) -= shift;
        h(q, q) += shift;
        h(p, q) = h(q, p) = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (i == p || i == q) continue;
          const double hip = h(i, p);
          const double hiq = h(i, q);
          h(i, p) = hip - s * (hiq + tau * hip);
          h(p, i) = h(i, p);
          h(i, q) = hiq + s * (hip - tau * hiq);
          h(q, i) = h(i, q);
        }
      }
    }
  }

  std::vector<double> eigenvalues(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) eigenvalues[static_cast<std::size_t>(i)] = h(i, i);
  std::sort(eigenvalues.begin(), eigenvalues.end());
  return eigenvalues;
}

}  // namespace pllab
