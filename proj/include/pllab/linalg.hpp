#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace pllab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols() || a.size() == 0) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

}  // namespace pllab
