#pragma once

#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pllab/linalg.hpp"
#include "pllab/objectives.hpp"
#include "pllab/rng.hpp"

namespace pllab {

/// Conditionally mean-zero gradient perturbation with a multiplicative
/// second-moment bound: E[||D||^2 | theta] <= sigma * (f(theta) - f_min).
/// Models are immutable; each sample call takes an RNG stream owned by
/// exactly one replica.
class NoiseModel {
 public:
  virtual ~NoiseModel() = default;
  virtual Vector sample(const Vector& theta, CounterRng& rng) const = 0;
  /// Declared bound constant; nullopt when only an empirical estimate exists.
  virtual std::optional<double> nominal_sigma() const = 0;
};

/// D = 0: deterministic gradient descent. Consumes no randomness.
class ZeroNoise final : public NoiseModel {
 public:
  Vector sample(const Vector& theta, CounterRng&) const override {
    return Vector::Zero(theta.size());
  }
  std::optional<double> nominal_sigma() const override { return 0.0; }
};

/// Worst-case multiplicative noise for the quadratic 0.5 <A theta, theta>:
/// D = eta * A^{1/2} theta with eta = +-sqrt(sigma/2) (scaled Rademacher),
/// which attains the second-moment bound with equality:
/// E[||D||^2 | theta] = (sigma/2) <A theta, theta> = sigma * f(theta).
class SharpQuadraticNoise final : public NoiseModel {
 public:
  SharpQuadraticNoise(const Matrix& a, double sigma) : sigma_(sigma) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
      throw std::invalid_argument("SharpQuadraticNoise: sigma must be nonnegative");
    if (!is_symmetric(a, 1e-12))
      throw std::invalid_argument("SharpQuadraticNoise: A must be symmetric");
    const Eigen::SelfAdjointEigenSolver<Matrix> es(a);
    const Vector& evs = es.eigenvalues();
    if (evs[0] < -1e-10 * std::max(1.0, std::abs(evs[evs.size() - 1])))
      throw std::invalid_argument("SharpQuadraticNoise: A must be positive semidefinite");
    sqrt_a_ = es.eigenvectors() * evs.cwiseMax(0.0).cwiseSqrt().asDiagonal() *
              es.eigenvectors().transpose();
    amplitude_ = std::sqrt(0.5 * sigma);
  }

  Vector sample(const Vector& theta, CounterRng& rng) const override {
    if (theta.size() != sqrt_a_.rows())
      throw std::invalid_argument("SharpQuadraticNoise: point has wrong dimension");
    return (rng.next_sign() * amplitude_) * (sqrt_a_ * theta);
  }

  std::optional<double> nominal_sigma() const override { return sigma_; }

  const Matrix& sqrt_matrix() const { return sqrt_a_; }

 private:
  Matrix sqrt_a_;
  double sigma_;
  double amplitude_;
};

/// Mini-batch gradient noise for interpolating least squares:
///   D = (1/M) sum_i a_{j_i} (a_{j_i}^T theta - b_{j_i}) - grad f(theta),
/// rows drawn uniformly, with replacement by default. Both the batch mean
/// and the reference full gradient are accumulated row by row, so D = 0
/// holds bit-exactly at interpolation points and for the full batch drawn
/// without replacement.
class MinibatchNoise final : public NoiseModel {
 public:
  MinibatchNoise(std::shared_ptr<const InterpolatingLeastSquares> objective,
                 Eigen::Index batch, bool with_replacement = true)
      : obj_(std::move(objective)), batch_(batch), with_replacement_(with_replacement) {
    if (!obj_) throw std::invalid_argument("MinibatchNoise: null objective");
    if (batch_ < 1 || batch_ > obj_->sample_count())
      throw std::invalid_argument("MinibatchNoise: batch size out of range");
  }

  Vector sample(const Vector& theta, CounterRng& rng) const override {
    const Matrix& a = obj_->data();
    const Vector& b = obj_->rhs();
    if (theta.size() != a.cols())
      throw std::invalid_argument("MinibatchNoise: point has wrong dimension");
    const Eigen::Index n = a.rows();
    const auto un = static_cast<std::uint64_t>(n);

    if (!with_replacement_ && batch_ == n) return Vector::Zero(theta.size());

    Vector batch_sum = Vector::Zero(theta.size());
    if (with_replacement_) {
      for (Eigen::Index i = 0; i < batch_; ++i) {
        const auto j = static_cast<Eigen::Index>(rng.next_below(un));
        batch_sum.noalias() += (a.row(j).dot(theta) - b[j]) * a.row(j).transpose();
      }
    } else {
      // partial Fisher-Yates: first batch_ entries are a uniform sample
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
      for (Eigen::Index i = 0; i < batch_; ++i) {
        const auto swap_at = i + static_cast<Eigen::Index>(
                                     rng.next_below(static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(swap_at)]);
        const Eigen::Index j = idx[static_cast<std::size_t>(i)];
        batch_sum.noalias() += (a.row(j).dot(theta) - b[j]) * a.row(j).transpose();
      }
    }

    Vector full_sum = Vector::Zero(theta.size());
    for (Eigen::Index i = 0; i < n; ++i)
      full_sum.noalias() += (a.row(i).dot(theta) - b[i]) * a.row(i).transpose();

    return batch_sum / static_cast<double>(batch_) - full_sum / static_cast<double>(n);
  }

  std::optional<double> nominal_sigma() const override { return std::nullopt; }

  Eigen::Index batch() const { return batch_; }
  bool with_replacement() const { return with_replacement_; }

 private:
  std::shared_ptr<const InterpolatingLeastSquares> obj_;
  Eigen::Index batch_;
  bool with_replacement_;
};

struct SigmaEstimate {
  double sigma_hat = 0.0;   // max over probes of mean ||D||^2 / gap
  double std_error = 0.0;   // standard error of the ratio at the max probe
};

/// Monte Carlo certificate of the multiplicative bound constant: for each
/// probe point, E[||D||^2] / (f - f_min) is estimated from `draws` samples;
/// the maximum over probes is returned with its standard error. Probe
/// points must have a gap above 1e-12.
inline SigmaEstimate effective_sigma(const NoiseModel& model, const Objective& obj,
                                     const std::vector<Vector>& probes, int draws,
                                     CounterRng& rng) {
  if (probes.empty()) throw std::invalid_argument("effective_sigma: no probe points");
  if (draws < 2) throw std::invalid_argument("effective_sigma: need at least 2 draws");

  SigmaEstimate best;
  bool first = true;
  for (const Vector& theta : probes) {
    const double gap = obj.value(theta) - obj.min_value();
    if (!(gap > 1e-12))
      throw std::invalid_argument("effective_sigma: probe point too close to the minimum");
    double sum = 0.0;
    double sum_sq = 0.0;
    for (int i = 0; i < draws; ++i) {
      const double q = model.sample(theta, rng).squaredNorm();
      sum += q;
      sum_sq += q * q;
    }
    const double mean = sum / draws;
    const double var =
        std::max(0.0, (sum_sq / draws - mean * mean) * draws / (draws - 1.0));
    const double ratio = mean / gap;
    if (first || ratio > best.sigma_hat) {
      best.sigma_hat = ratio;
      best.std_error = std::sqrt(var / draws) / gap;
      first = false;
    }
  }
  return best;
}

}  // namespace pllab
