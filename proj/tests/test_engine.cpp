#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <vector>

#include "pllab/engine.hpp"
#include "pllab/noise.hpp"
#include "pllab/objectives.hpp"
#include "pllab/rates.hpp"
#include "support.hpp"

using namespace pllab;

namespace {

Matrix diag2(double a, double b) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

/// Gradient with a NaN entry away from the origin; triggers the hard-error
/// path without a non-finite iterate.
class PoisonedGradient final : public Objective {
 public:
  Eigen::Index dim() const override { return 1; }
  double value(const Vector&) const override { return 1.0; }
  Vector gradient(const Vector& theta) const override {
    Vector g(1);
    g[0] = theta[0] > 0.5 ? std::numeric_limits<double>::quiet_NaN() : 1.0;
    return g;
  }
  double min_value() const override { return 0.0; }
};

}  // namespace

TEST_CASE("run: one hand-computed step on diag(1,2)") {
  const QuadraticObjective quad(diag2(1.0, 2.0));
  const ZeroNoise noise;
  RunConfig cfg;
  cfg.gamma = StepSize(0.5);
  cfg.steps = 1;
  cfg.theta0 = Vector(2);
  cfg.theta0 << 1.0, 1.0;
  const Trajectory traj = run(quad, noise, cfg, 0);
  REQUIRE(traj.size() == 2);
  CHECK(traj.theta_end[0] == 0.5);
  CHECK(traj.theta_end[1] == 0.0);
  CHECK(traj.theta_end.squaredNorm() == 0.25);
  CHECK(traj.ks.front() == 0);
  CHECK(traj.ks.back() == 1);
  CHECK(traj.f_gap.front() == 1.5);
  CHECK_FALSE(traj.diverged());
}

TEST_CASE("run: zero step size keeps the iterate fixed") {
  const RingValleyObjective ring(1.0, 4.0);
  const ZeroNoise noise;
  RunConfig cfg;
  cfg.gamma = StepSize(0.0);
  cfg.steps = 50;
  cfg.theta0 = Vector(3);
  cfg.theta0 << 0.4, 1.2, -0.3;
  const Trajectory traj = run(ring, noise, cfg, 0);
  for (const Vector& theta : traj.thetas) CHECK(theta == cfg.theta0);
  CHECK(traj.theta_end == cfg.theta0);
}

TEST_CASE("run: ring valley gap decays monotonically and hits 1e-20 fast") {
  const RingValleyObjective ring(1.0, 4.0);
  const ZeroNoise noise;
  RunConfig cfg;
  cfg.gamma = StepSize(0.3);
  cfg.steps = 200;
  cfg.theta0 = Vector(3);
  cfg.theta0 << 0.5, 1.3, 0.0;
  const Trajectory traj = run(ring, noise, cfg, 0);
  REQUIRE_FALSE(traj.diverged());
  for (std::size_t i = 6; i < traj.size(); ++i) CHECK(traj.f_gap[i] <= traj.f_gap[i - 1]);
  CHECK(traj.f_gap.back() < 1e-20);
}

TEST_CASE("run: record thinning includes k = 0 and the final step") {
  const QuadraticObjective quad(diag2(1.0, 2.0));
  const ZeroNoise noise;
  RunConfig cfg;
  cfg.gamma = StepSize(0.1);
  cfg.steps = 103;
  cfg.record_every = 10;
  cfg.theta0 = Vector::Ones(2);
  const Trajectory traj = run(quad, noise, cfg, 0);
  CHECK(traj.ks.front() == 0);
  CHECK(traj.ks.back() == 103);
  CHECK(traj.size() == 12);  // 0,10,...,100,103
}

TEST_CASE("run: divergence is a status, not an exception") {
  const QuadraticObjective quad(diag2(1.0, 1.0));
  const ZeroNoise noise;
  RunConfig cfg;
  cfg.gamma = StepSize(3.0);  // contraction factor |1-3| = 2 per step
  cfg.steps = 4000;
  cfg.record_every = 100;
  cfg.theta0 = Vector::Ones(2);
  const Trajectory traj = run(quad, noise, cfg, 0);
  CHECK(traj.diverged());
  CHECK(traj.diverged_at.value() > 100);
  CHECK(traj.diverged_at.value() < 4000);
  CHECK(traj.steps_completed == traj.diverged_at.value() - 1);
}

TEST_CASE("run: non-finite gradient at a finite point is a hard error") {
  const PoisonedGradient poisoned;
  const ZeroNoise noise;
  RunConfig cfg;
  cfg.gamma = StepSize(0.1);
  cfg.steps = 10;
  cfg.theta0 = Vector::Ones(1);
  CHECK_THROWS_AS(run(poisoned, noise, cfg, 0), std::runtime_error);
}

TEST_CASE("run_ensemble: determinism and thread-count independence") {
  const auto quad = QuadraticObjective::from_spectrum({1.0, 2.0}, 7);
  const SharpQuadraticNoise noise(quad.matrix(), 2.0);
  RunConfig cfg;
  cfg.gamma = StepSize(0.4);
  cfg.steps = 30;
  cfg.replicas = 16;
  cfg.base_seed = 99;
  cfg.theta0 = Vector::Ones(2);

  const auto serial = run_ensemble(quad, noise, cfg, 1);
  const auto parallel = run_ensemble(quad, noise, cfg, 4);
  const auto repeat = run_ensemble(quad, noise, cfg, 2);
  REQUIRE(serial.size() == 16);
  for (std::size_t r = 0; r < serial.size(); ++r) {
    CHECK(serial[r].theta_end == parallel[r].theta_end);  // bit-identical
    CHECK(serial[r].theta_end == repeat[r].theta_end);
    CHECK(serial[r].f_gap == parallel[r].f_gap);
  }
  // replicas differ from each other (the noise streams are distinct)
  CHECK(serial[0].theta_end != serial[1].theta_end);

  // replicas = 1 equals a single run call
  RunConfig single = cfg;
  single.replicas = 1;
  const auto one = run_ensemble(quad, noise, single, 3);
  const auto direct = run(quad, noise, single, 0);
  CHECK(one[0].theta_end == direct.theta_end);
}

TEST_CASE("run_ensemble: zero noise makes replicas bit-identical") {
  const auto quad = QuadraticObjective::from_spectrum({1.0, 2.0}, 8);
  const ZeroNoise noise;
  RunConfig cfg;
  cfg.gamma = StepSize(0.3);
  cfg.steps = 25;
  cfg.replicas = 5;
  cfg.theta0 = Vector::Ones(2);
  const auto trajectories = run_ensemble(quad, noise, cfg, 2);
  for (const auto& traj : trajectories) CHECK(traj.theta_end == trajectories[0].theta_end);
}

TEST_CASE("exact_second_moment: noiseless case reduces to the deterministic recursion") {
  const Matrix a = QuadraticObjective::from_spectrum({1.0, 2.0}, 9).matrix();
  Vector theta0(2);
  theta0 << 1.0, -0.5;
  const StepSize gamma(0.4);
  const auto traces = exact_second_moment(a, 0.0, gamma, theta0 * theta0.transpose(), 25);
  const Matrix contraction = Matrix::Identity(2, 2) - gamma.value * a;
  Vector theta = theta0;
  for (long k = 0; k <= 25; ++k) {
    const double expected = theta.squaredNorm();
    CHECK(std::abs(traces[static_cast<std::size_t>(k)] - expected) <=
          1e-12 * std::max(1.0, expected));
    theta = contraction * theta;
  }
}

TEST_CASE("exact_second_moment: eigenspace seed gives the branch power exactly") {
  // On diag(1,2) with sigma=2, gamma=0.4 the mu-branch 0.52 dominates the
  // L-branch 0.36; seeding the mu-eigenvector gives E||theta_k||^2 = 0.52^k.
  const Matrix a = diag2(1.0, 2.0);
  Vector e_mu(2);
  e_mu << 1.0, 0.0;
  CHECK(m_rate_branch(1.0, 2.0, 0.4) == Catch::Approx(0.52).epsilon(1e-15));
  CHECK(m_rate_branch(2.0, 2.0, 0.4) == Catch::Approx(0.36).epsilon(1e-15));
  const auto traces = exact_second_moment(a, 2.0, StepSize(0.4), e_mu * e_mu.transpose(), 20);
  for (long k = 0; k <= 20; ++k)
    CHECK(traces[static_cast<std::size_t>(k)] ==
          Catch::Approx(std::pow(0.52, static_cast<double>(k))).epsilon(1e-12));
}

TEST_CASE("exact_second_moment: dominated by m(gamma)^k for random instances") {
  CounterRng rng(31);
  for (int trial = 0; trial < 12; ++trial) {
    const double mu = rng.next_uniform(0.3, 1.5);
    const double l = mu * rng.next_uniform(1.0, 4.0);
    const double sigma = rng.next_uniform(0.0, 3.0);
    const SpectralParams p{mu, l, sigma};
    const double gamma = rng.next_uniform(0.05, 0.95) * max_stable_step(p).value;
    const auto quad = QuadraticObjective::from_spectrum({mu, l}, 100 + trial);

    Vector theta0(2);
    theta0 << rng.next_gaussian(), rng.next_gaussian();
    const Matrix m0 = theta0 * theta0.transpose();
    const auto traces = exact_second_moment(quad.matrix(), sigma, StepSize(gamma), m0, 30);
    const double m = m_rate(p, StepSize(gamma));
    for (long k = 0; k <= 30; ++k) {
      const double bound = std::pow(m, static_cast<double>(k)) * m0.trace();
      CHECK(traces[static_cast<std::size_t>(k)] <= bound * (1.0 + 1e-10));
    }
  }
}

TEST_CASE("exact_second_moment: keeps the state symmetric PSD") {
  const auto quad = QuadraticObjective::from_spectrum({0.5, 2.5}, 11);
  Vector theta0(2);
  theta0 << 1.0, 2.0;
  SecondMomentRecursion recursion(quad.matrix(), 1.5, StepSize(0.3),
                                  theta0 * theta0.transpose());
  for (int k = 0; k < 50; ++k) {
    recursion.step();
    const Matrix& m = recursion.matrix();
    CHECK(is_symmetric(m, 1e-12));
    const Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    CHECK(es.eigenvalues()[0] >= -1e-10 * std::max(1e-300, m.trace()));
  }
}

TEST_CASE("exact_second_moment: asymmetric inputs rejected") {
  Matrix asym(2, 2);
  asym << 1.0, 0.2, 0.0, 1.0;
  CHECK_THROWS_AS(exact_second_moment(asym, 1.0, StepSize(0.1), Matrix::Identity(2, 2), 3),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      exact_second_moment(Matrix::Identity(2, 2), 1.0, StepSize(0.1), asym, 3),
      std::invalid_argument);
}

TEST_CASE("ensemble mean matches the exact second-moment recursion") {
  const auto quad = QuadraticObjective::from_spectrum({1.0, 2.0}, 12);
  const double sigma = 2.0;
  const double gamma = 0.4;
  const SharpQuadraticNoise noise(quad.matrix(), sigma);

  RunConfig cfg;
  cfg.gamma = StepSize(gamma);
  cfg.steps = 8;
  cfg.replicas = 4000;
  cfg.base_seed = 2024;
  cfg.theta0 = Vector(2);
  cfg.theta0 << 0.8, -0.6;

  const auto trajectories = run_ensemble(quad, noise, cfg, 0);
  const auto exact =
      exact_second_moment(quad.matrix(), sigma, cfg.gamma, cfg.theta0 * cfg.theta0.transpose(),
                          cfg.steps);

  // exact standard error from the shared-eta fourth-moment products
  const Eigen::SelfAdjointEigenSolver<Matrix> es(quad.matrix());
  const Vector coeff = es.eigenvectors().transpose() * cfg.theta0;
  const std::vector<double> lambdas{es.eigenvalues()[0], es.eigenvalues()[1]};
  const std::vector<double> c2{coeff[0] * coeff[0], coeff[1] * coeff[1]};

  for (long k : {1L, 4L, 8L}) {
    double mean = 0.0;
    for (const auto& traj : trajectories)
      mean += traj.thetas[static_cast<std::size_t>(k)].squaredNorm();
    mean /= static_cast<double>(cfg.replicas);
    const auto oracle =
        testsupport::sharp_quadratic_moments(lambdas, c2, sigma, gamma, k, cfg.replicas);
    CHECK(std::abs(oracle.mean - exact[static_cast<std::size_t>(k)]) <=
          1e-10 * std::max(1.0, oracle.mean));  // the two oracles agree
    CHECK(std::abs(mean - exact[static_cast<std::size_t>(k)]) <= 3.0 * oracle.std_error);
  }
}

TEST_CASE("ensemble mean obeys the quadratic upper bound") {
  const auto quad = QuadraticObjective::from_spectrum({1.0, 2.0}, 13);
  const double sigma = 1.0;
  const double gamma = 0.5;
  const SpectralParams p{1.0, 2.0, sigma};
  REQUIRE(gamma < max_stable_step(p).value);
  const SharpQuadraticNoise noise(quad.matrix(), sigma);

  RunConfig cfg;
  cfg.gamma = StepSize(gamma);
  cfg.steps = 8;
  cfg.replicas = 4000;
  cfg.base_seed = 77;
  cfg.theta0 = Vector(2);
  cfg.theta0 << 1.0, 1.0;

  const auto trajectories = run_ensemble(quad, noise, cfg, 0);
  const Eigen::SelfAdjointEigenSolver<Matrix> es(quad.matrix());
  const Vector coeff = es.eigenvectors().transpose() * cfg.theta0;
  const std::vector<double> lambdas{es.eigenvalues()[0], es.eigenvalues()[1]};
  const std::vector<double> c2{coeff[0] * coeff[0], coeff[1] * coeff[1]};
  const double m = m_rate(p, cfg.gamma);

  for (long k = 1; k <= cfg.steps; ++k) {
    double mean = 0.0;
    for (const auto& traj : trajectories)
      mean += traj.thetas[static_cast<std::size_t>(k)].squaredNorm();
    mean /= static_cast<double>(cfg.replicas);
    const auto oracle =
        testsupport::sharp_quadratic_moments(lambdas, c2, sigma, gamma, k, cfg.replicas);
    const double rel_se = oracle.std_error / std::max(oracle.mean, 1e-300);
    const double bound = std::pow(m, static_cast<double>(k)) * cfg.theta0.squaredNorm();
    CHECK(mean <= bound * (1.0 + 4.0 * rel_se));
  }
}

TEST_CASE("eigenspace-seeded ensemble attains m(gamma)^k within 3 exact SEs") {
  const auto quad = QuadraticObjective::from_spectrum({1.0, 2.0}, 14);
  const double sigma = 2.0;
  const double gamma = 0.4;  // mu-branch dominates: m = 0.52
  const SharpQuadraticNoise noise(quad.matrix(), sigma);
  const Eigen::SelfAdjointEigenSolver<Matrix> es(quad.matrix());

  RunConfig cfg;
  cfg.gamma = StepSize(gamma);
  cfg.steps = 6;
  cfg.replicas = 4000;
  cfg.base_seed = 55;
  cfg.theta0 = es.eigenvectors().col(0);  // eigenvalue 1 maximizes the branch

  const auto trajectories = run_ensemble(quad, noise, cfg, 0);
  const double m = m_rate({1.0, 2.0, sigma}, cfg.gamma);
  for (long k = 1; k <= cfg.steps; ++k) {
    double mean = 0.0;
    for (const auto& traj : trajectories)
      mean += traj.thetas[static_cast<std::size_t>(k)].squaredNorm();
    mean /= static_cast<double>(cfg.replicas);
    const auto oracle = testsupport::sharp_quadratic_moments({1.0}, {1.0}, sigma, gamma, k,
                                                             cfg.replicas);
    CHECK(std::abs(mean - std::pow(m, static_cast<double>(k))) <= 3.0 * oracle.std_error);
  }
}

TEST_CASE("run config validation") {
  const QuadraticObjective quad(diag2(1.0, 2.0));
  const ZeroNoise noise;
  RunConfig cfg;
  cfg.theta0 = Vector::Ones(2);
  cfg.steps = 0;
  CHECK_THROWS_AS(run(quad, noise, cfg, 0), std::invalid_argument);
  cfg.steps = 5;
  cfg.record_every = 0;
  CHECK_THROWS_AS(run(quad, noise, cfg, 0), std::invalid_argument);
  cfg.record_every = 1;
  cfg.theta0 = Vector::Ones(3);
  CHECK_THROWS_AS(run(quad, noise, cfg, 0), std::invalid_argument);
  cfg.theta0 = Vector::Ones(2);
  cfg.replicas = 0;
  CHECK_THROWS_AS(run_ensemble(quad, noise, cfg), std::invalid_argument);
}
