#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>
#include <vector>

#include "pllab/linalg.hpp"
#include "pllab/noise.hpp"
#include "pllab/objectives.hpp"
#include "pllab/rates.hpp"
#include "pllab/rng.hpp"

namespace pllab {

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is claimed
/// through an atomic counter; each index is processed exactly once, so the
/// results do not depend on the worker count.
template <typename Fn>
void parallel_indexed(int n, int threads, Fn&& fn) {
  if (n <= 0) return;
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::scoped_lock lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Parameters of one (S)GD experiment.
struct RunConfig {
  StepSize gamma{0.1};
  long steps = 1000;
  int replicas = 1;
  std::uint64_t base_seed = 0;
  long record_every = 1;
  Vector theta0;

  void validate(Eigen::Index dim) const {
    if (steps < 1) throw std::invalid_argument("RunConfig: steps must be >= 1");
    if (replicas < 1) throw std::invalid_argument("RunConfig: replicas must be >= 1");
    if (record_every < 1) throw std::invalid_argument("RunConfig: record_every must be >= 1");
    if (theta0.size() != dim)
      throw std::invalid_argument("RunConfig: theta0 has wrong dimension");
    if (!theta0.allFinite())
      throw std::invalid_argument("RunConfig: theta0 must be finite");
  }
};

/// Thinned record of one run. dist_sq is NaN until filled against a
/// reference point (see fill_distances); tiny negative objective gaps from
/// rounding are clamped to zero and counted.
struct Trajectory {
  std::vector<long> ks;
  std::vector<double> f_gap;
  std::vector<double> dist_sq;
  std::vector<double> grad_norm;
  std::vector<Vector> thetas;
  Vector theta_end;
  long steps_completed = 0;
  std::optional<long> diverged_at;
  int clamped_gaps = 0;

  bool diverged() const { return diverged_at.has_value(); }
  std::size_t size() const { return ks.size(); }
};

/// theta_k = theta_{k-1} - gamma * (grad f(theta_{k-1}) + D_k).
///
/// Records every record_every-th step, always including k = 0 and the final
/// step. Deterministic given (base_seed, replica_index). A non-finite
/// iterate or objective value ends the run with a divergence status; a
/// non-finite gradient at a finite point is a hard error.
inline Trajectory run(const Objective& obj, const NoiseModel& noise, const RunConfig& cfg,
                      int replica_index) {
  cfg.validate(obj.dim());
  CounterRng rng(cfg.base_seed, static_cast<std::uint64_t>(replica_index));
  Vector theta = cfg.theta0;
  Trajectory traj;
  const double f_min = obj.min_value();

  for (long k = 0;;) {
    const double f = obj.value(theta);
    if (!theta.allFinite() || !std::isfinite(f)) {
      traj.diverged_at = k;
      traj.steps_completed = k > 0 ? k - 1 : 0;
      break;
    }
    const Vector grad = obj.gradient(theta);
    if (!grad.allFinite())
      throw std::runtime_error("run: non-finite gradient at a finite iterate");
    if (k % cfg.record_every == 0 || k == cfg.steps) {
      double gap = f - f_min;
      if (gap < 0.0) {
        gap = 0.0;
        ++traj.clamped_gaps;
      }
      traj.ks.push_back(k);
      traj.f_gap.push_back(gap);
      traj.dist_sq.push_back(std::numeric_limits<double>::quiet_NaN());
      traj.grad_norm.push_back(grad.norm());
      traj.thetas.push_back(theta);
    }
    if (k == cfg.steps) {
      traj.steps_completed = k;
      break;
    }
    const Vector d = noise.sample(theta, rng);
    theta -= cfg.gamma.value * (grad + d);
    ++k;
  }
  traj.theta_end = theta;
  return traj;
}

inline void fill_distances(Trajectory& traj, const Vector& reference) {
  for (std::size_t i = 0; i < traj.thetas.size(); ++i)
    traj.dist_sq[i] = (traj.thetas[i] - reference).squaredNorm();
}

/// Replica r draws from RNG stream (base_seed, r); output is identical for
/// any worker count and any execution order.
inline std::vector<Trajectory> run_ensemble(const Objective& obj, const NoiseModel& noise,
                                            const RunConfig& cfg, int threads = 0) {
  cfg.validate(obj.dim());
  std::vector<Trajectory> out(static_cast<std::size_t>(cfg.replicas));
  detail::parallel_indexed(cfg.replicas, threads,
                           [&](int r) { out[static_cast<std::size_t>(r)] = run(obj, noise, cfg, r); });
  return out;
}

/// Exact second-moment propagation for the quadratic 0.5 <A theta, theta>
/// under worst-case multiplicative noise D_k = eta_k A^{1/2} theta_{k-1}:
///   M_k = (I - gA) M_{k-1} (I - gA) + g^2 (sigma/2) A^{1/2} M_{k-1} A^{1/2},
/// where M_k = E[theta_k theta_k^T], so trace(M_k) = E||theta_k||^2.
class SecondMomentRecursion {
 public:
  SecondMomentRecursion(const Matrix& a, double sigma, StepSize gamma, const Matrix& m0)
      : m_(m0) {
    if (!is_symmetric(a, 1e-12))
      throw std::invalid_argument("SecondMomentRecursion: A must be symmetric");
    if (!is_symmetric(m_, 1e-12))
      throw std::invalid_argument("SecondMomentRecursion: M0 must be symmetric");
    if (m_.rows() != a.rows())
      throw std::invalid_argument("SecondMomentRecursion: dimension mismatch");
    if (!(sigma >= 0.0))
      throw std::invalid_argument("SecondMomentRecursion: sigma must be nonnegative");
    const Eigen::SelfAdjointEigenSolver<Matrix> es(a);
    const Vector& evs = es.eigenvalues();
    if (evs[0] < -1e-10 * std::max(1.0, std::abs(evs[evs.size() - 1])))
      throw std::invalid_argument("SecondMomentRecursion: A must be positive semidefinite");
    sqrt_a_ = es.eigenvectors() * evs.cwiseMax(0.0).cwiseSqrt().asDiagonal() *
              es.eigenvectors().transpose();
    contraction_ = Matrix::Identity(a.rows(), a.cols()) - gamma.value * a;
    noise_coeff_ = 0.5 * gamma.value * gamma.value * sigma;
  }

  void step() {
    m_ = contraction_ * m_ * contraction_ + noise_coeff_ * sqrt_a_ * m_ * sqrt_a_;
    m_ = 0.5 * (m_ + m_.transpose());
  }

  const Matrix& matrix() const { return m_; }
  double trace() const { return m_.trace(); }

 private:
  Matrix m_;
  Matrix sqrt_a_;
  Matrix contraction_;
  double noise_coeff_ = 0.0;
};

/// Trace sequence E||theta_k||^2 for k = 0..steps.
inline std::vector<double> exact_second_moment(const Matrix& a, double sigma, StepSize gamma,
                                               const Matrix& m0, long steps) {
  SecondMomentRecursion recursion(a, sigma, gamma, m0);
  std::vector<double> traces;
  traces.reserve(static_cast<std::size_t>(steps) + 1);
  traces.push_back(recursion.trace());
  for (long k = 0; k < steps; ++k) {
    recursion.step();
    traces.push_back(recursion.trace());
  }
  return traces;
}

}  // namespace pllab
