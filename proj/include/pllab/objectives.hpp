#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pllab/jacobi.hpp"
#include "pllab/linalg.hpp"
#include "pllab/rng.hpp"

namespace pllab {

/// A twice continuously differentiable test objective with known minimum
/// value and, for the built-ins, analytically known minima geometry.
/// Implementations are immutable after construction; evaluation is
/// reentrant and thread-safe.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual Eigen::Index dim() const = 0;
  virtual double value(const Vector& theta) const = 0;
  virtual Vector gradient(const Vector& theta) const = 0;
  /// Analytic Hessian; nullopt when the objective does not provide one.
  virtual std::optional<Matrix> hessian(const Vector& theta) const {
    (void)theta;
    return std::nullopt;
  }
  virtual double min_value() const = 0;
  /// (mu, L): extreme nonzero Hessian eigenvalues on the minima set, when known.
  virtual std::optional<std::pair<double, double>> local_spectrum_hint() const {
    return std::nullopt;
  }
  /// Nearest minimizer, when the minima set is known in closed form.
  virtual std::optional<Vector> project_to_manifold(const Vector& theta) const {
    (void)theta;
    return std::nullopt;
  }

 protected:
  void check_dim(const Vector& theta) const {
    if (theta.size() != dim())
      throw std::invalid_argument("Objective: point has wrong dimension");
  }
};

/// f(theta) = 0.5 <A theta, theta> for a symmetric positive semidefinite A.
/// The minima set is ker(A); for full-rank A the unique minimum is 0.
class QuadraticObjective final : public Objective {
 public:
  explicit QuadraticObjective(Matrix a) : a_(std::move(a)) {
    if (a_.rows() == 0 || a_.rows() != a_.cols())
      throw std::invalid_argument("QuadraticObjective: A must be square and nonempty");
    if (!is_symmetric(a_, 1e-12))
      throw std::invalid_argument("QuadraticObjective: A must be symmetric");
    init_spectrum();
  }

  /// A = Q diag(eigenvalues) Q^T with a seeded random orthogonal Q, so the
  /// spectrum is exact while the coordinates are not axis-aligned.
  static QuadraticObjective from_spectrum(const std::vector<double>& eigenvalues,
                                          std::uint64_t seed) {
    const auto d = static_cast<Eigen::Index>(eigenvalues.size());
    if (d == 0) throw std::invalid_argument("QuadraticObjective: empty spectrum");
    for (double ev : eigenvalues)
      if (!(ev >= 0.0))
        throw std::invalid_argument("QuadraticObjective: eigenvalues must be nonnegative");
    const Matrix q = random_orthogonal(d, seed);
    Vector lambda(d);
    for (Eigen::Index i = 0; i < d; ++i) lambda[i] = eigenvalues[static_cast<std::size_t>(i)];
    Matrix a = q * lambda.asDiagonal() * q.transpose();
    a = 0.5 * (a + a.transpose());
    return QuadraticObjective(std::move(a));
  }

  /// Haar-ish random orthogonal matrix: QR of a Gaussian matrix with the
  /// sign convention fixed by the R diagonal.
  static Matrix random_orthogonal(Eigen::Index d, std::uint64_t seed) {
    CounterRng rng(seed, /*stream=*/0x9f);
    Matrix g(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) g(i, j) = rng.next_gaussian();
    const Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < d; ++j)
      if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
  }

  Eigen::Index dim() const override { return a_.rows(); }
  double value(const Vector& theta) const override {
    check_dim(theta);
    return 0.5 * theta.dot(a_ * theta);
  }
  Vector gradient(const Vector& theta) const override {
    check_dim(theta);
    return a_ * theta;
  }
  std::optional<Matrix> hessian(const Vector& theta) const override {
    check_dim(theta);
    return a_;
  }
  double min_value() const override { return 0.0; }
  std::optional<std::pair<double, double>> local_spectrum_hint() const override {
    if (rank_ == 0) return std::nullopt;
    return std::make_pair(mu_, l_);
  }
  std::optional<Vector> project_to_manifold(const Vector& theta) const override {
    check_dim(theta);
    return kernel_projector_ * theta;
  }

  const Matrix& matrix() const { return a_; }
  Eigen::Index rank() const { return rank_; }

 private:
  void init_spectrum() {
    const Eigen::SelfAdjointEigenSolver<Matrix> es(a_);
    const Vector& evs = es.eigenvalues();
    const double scale = std::max(1.0, std::abs(evs[evs.size() - 1]));
    const double tol = 1e-10 * scale;
    if (evs[0] < -tol)
      throw std::invalid_argument("QuadraticObjective: A must be positive semidefinite");
    kernel_projector_ = Matrix::Zero(a_.rows(), a_.cols());
    for (Eigen::Index i = 0; i < evs.size(); ++i) {
      if (std::abs(evs[i]) < tol) {
        kernel_projector_ += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose();
      } else {
        if (rank_ == 0) mu_ = evs[i];
        l_ = evs[i];
        ++rank_;
      }
    }
  }

  Matrix a_;
  Matrix kernel_projector_;
  double mu_ = 0.0;
  double l_ = 0.0;
  Eigen::Index rank_ = 0;
};

/// Non-convex objective on R^3 whose minima form the unit circle in the
/// y-z plane:
///   f(x, y, z) = (alpha/2) x^2 + (beta/8) (y^2 + z^2 - 1)^2.
/// At every minimizer the Hessian eigenvalues are {0, alpha, beta}; the
/// kernel points along the circle tangent. The Hessian at the origin has
/// eigenvalues {alpha, -beta/2, -beta/2}, so the function is not convex.
class RingValleyObjective final : public Objective {
 public:
  RingValleyObjective(double alpha, double beta) : alpha_(alpha), beta_(beta) {
    if (!(alpha > 0.0) || !(beta > 0.0))
      throw std::invalid_argument("RingValleyObjective: alpha and beta must be positive");
  }

  Eigen::Index dim() const override { return 3; }

  double value(const Vector& theta) const override {
    check_dim(theta);
    const double g = theta[1] * theta[1] + theta[2] * theta[2] - 1.0;
    return 0.5 * alpha_ * theta[0] * theta[0] + 0.125 * beta_ * g * g;
  }

  Vector gradient(const Vector& theta) const override {
    check_dim(theta);
    const double g = theta[1] * theta[1] + theta[2] * theta[2] - 1.0;
    Vector grad(3);
    grad[0] = alpha_ * theta[0];
    grad[1] = 0.5 * beta_ * g * theta[1];
    grad[2] = 0.5 * beta_ * g * theta[2];
    return grad;
  }

  std::optional<Matrix> hessian(const Vector& theta) const override {
    check_dim(theta);
    const double y = theta[1];
    const double z = theta[2];
    const double g = y * y + z * z - 1.0;
    Matrix h = Matrix::Zero(3, 3);
    h(0, 0) = alpha_;
    h(1, 1) = 0.5 * beta_ * (g + 2.0 * y * y);
    h(2, 2) = 0.5 * beta_ * (g + 2.0 * z * z);
    h(1, 2) = h(2, 1) = beta_ * y * z;
    return h;
  }

  double min_value() const override { return 0.0; }

  std::optional<std::pair<double, double>> local_spectrum_hint() const override {
    return std::make_pair(std::min(alpha_, beta_), std::max(alpha_, beta_));
  }

  /// Radial projection of the y-z part; undefined on the x-axis.
  std::optional<Vector> project_to_manifold(const Vector& theta) const override {
    check_dim(theta);
    const double r = std::hypot(theta[1], theta[2]);
    if (r == 0.0) return std::nullopt;
    Vector p(3);
    p << 0.0, theta[1] / r, theta[2] / r;
    return p;
  }

  /// Point on the minima circle at angle t.
  Vector circle_point(double t) const {
    Vector p(3);
    p << 0.0, std::cos(t), std::sin(t);
    return p;
  }

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

 private:
  double alpha_;
  double beta_;
};

/// Overparameterized least squares with a planted interpolator:
///   f(theta) = (1/2N) ||A theta - b||^2,  b = A theta_star,
/// so f(theta_star) = 0 exactly and the minima form the affine subspace
/// theta_star + null(A) of dimension d - rank(A).
class InterpolatingLeastSquares final : public Objective {
 public:
  InterpolatingLeastSquares(Matrix data, Vector planted)
      : a_(std::move(data)), theta_star_(std::move(planted)) {
    const Eigen::Index n = a_.rows();
    const Eigen::Index d = a_.cols();
    if (n < 1 || d < 1)
      throw std::invalid_argument("InterpolatingLeastSquares: empty data matrix");
    if (n >= d)
      throw std::invalid_argument(
          "InterpolatingLeastSquares: requires fewer samples than dimensions (N < d)");
    if (theta_star_.size() != d)
      throw std::invalid_argument("InterpolatingLeastSquares: planted point has wrong dimension");
    // Row-by-row dot products so that per-sample residuals at theta_star are
    // exactly zero for any later consumer using the same access pattern.
    b_ = Vector(n);
    for (Eigen::Index i = 0; i < n; ++i) b_[i] = a_.row(i).dot(theta_star_);
    hess_ = (a_.transpose() * a_) / static_cast<double>(n);
    hess_ = 0.5 * (hess_ + hess_.transpose());
    init_spectrum();
  }

  /// Seeded instance with i.i.d. standard normal entries.
  static InterpolatingLeastSquares gaussian(Eigen::Index n_samples, Eigen::Index dim,
                                            std::uint64_t seed) {
    CounterRng data_rng(seed, 0x11);
    Matrix a(n_samples, dim);
    for (Eigen::Index i = 0; i < n_samples; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) a(i, j) = data_rng.next_gaussian();
    CounterRng planted_rng(seed, 0x12);
    Vector star(dim);
    for (Eigen::Index j = 0; j < dim; ++j) star[j] = planted_rng.next_gaussian();
    return InterpolatingLeastSquares(std::move(a), std::move(star));
  }

  Eigen::Index dim() const override { return a_.cols(); }

  double value(const Vector& theta) const override {
    check_dim(theta);
    return 0.5 * (a_ * theta - b_).squaredNorm() / static_cast<double>(a_.rows());
  }

  Vector gradient(const Vector& theta) const override {
    check_dim(theta);
    return a_.transpose() * (a_ * theta - b_) / static_cast<double>(a_.rows());
  }

  std::optional<Matrix> hessian(const Vector& theta) const override {
    check_dim(theta);
    return hess_;
  }

  double min_value() const override { return 0.0; }

  std::optional<std::pair<double, double>> local_spectrum_hint() const override {
    if (rank_ == 0) return std::nullopt;
    return std::make_pair(mu_, l_);
  }

  /// Orthogonal projection onto theta_star + null(A).
  std::optional<Vector> project_to_manifold(const Vector& theta) const override {
    check_dim(theta);
    return theta - row_projector_ * (theta - theta_star_);
  }

  Eigen::Index sample_count() const { return a_.rows(); }
  Eigen::Index rank() const { return rank_; }
  const Matrix& data() const { return a_; }
  const Vector& rhs() const { return b_; }
  const Vector& planted() const { return theta_star_; }

 private:
  void init_spectrum() {
    const Eigen::SelfAdjointEigenSolver<Matrix> es(hess_);
    const Vector& evs = es.eigenvalues();
    const double scale = std::max(1.0, std::abs(evs[evs.size() - 1]));
    const double tol = 1e-10 * scale;
    row_projector_ = Matrix::Zero(hess_.rows(), hess_.cols());
    for (Eigen::Index i = 0; i < evs.size(); ++i) {
      if (evs[i] < tol) continue;
      row_projector_ += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose();
      if (rank_ == 0) mu_ = evs[i];
      l_ = evs[i];
      ++rank_;
    }
  }

  Matrix a_;
  Vector theta_star_;
  Vector b_;
  Matrix hess_;
  Matrix row_projector_;
  double mu_ = 0.0;
  double l_ = 0.0;
  Eigen::Index rank_ = 0;
};

struct LocalSpectrum {
  double mu;       // smallest nonzero Hessian eigenvalue
  double L;        // largest nonzero Hessian eigenvalue
  int n_nonzero;   // normal dimension; kernel dimension is dim - n_nonzero
};

/// Extreme nonzero Hessian eigenvalues and their count at a minimizer.
/// The point must satisfy ||grad|| <= grad_tol * (1 + ||theta||); eigenvalues
/// with |lambda| < kernel_tol (default 1e-6 * max(1, max|lambda|)) count as
/// the kernel.
inline LocalSpectrum local_spectrum(const Objective& obj, const Vector& theta,
                                    double grad_tol = 1e-8, double kernel_tol = -1.0) {
  const double grad_norm = obj.gradient(theta).norm();
  if (grad_norm > grad_tol * (1.0 + theta.norm()))
    throw std::invalid_argument("local_spectrum: gradient norm exceeds tolerance, "
                                "point is not on the minima set");
  const auto hess = obj.hessian(theta);
  if (!hess) throw std::invalid_argument("local_spectrum: objective provides no Hessian");
  const auto evs = jacobi_eigenvalues(*hess);
  double scale = 1.0;
  for (double ev : evs) scale = std::max(scale, std::abs(ev));
  const double tol = kernel_tol > 0.0 ? kernel_tol : 1e-6 * scale;

  LocalSpectrum spec{0.0, 0.0, 0};
  for (double ev : evs) {
    if (std::abs(ev) < tol) continue;
    if (ev < 0.0)
      throw std::invalid_argument("local_spectrum: negative Hessian eigenvalue, "
                                  "point is not a local minimizer");
    if (spec.n_nonzero == 0) spec.mu = ev;
    spec.L = std::max(spec.L, ev);
    ++spec.n_nonzero;
  }
  if (spec.n_nonzero == 0)
    throw std::invalid_argument("local_spectrum: Hessian has no nonzero eigenvalues");
  return spec;
}

}  // namespace pllab
