#include "hmcgeo/hmc.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "hmcgeo/errors.hpp"
#include "hmcgeo/targets.hpp"
#include "support/finite_diff.hpp"

using namespace hmcgeo;

namespace {

GaussianTarget standard_normal(Eigen::Index d) {
  return GaussianTarget(Eigen::MatrixXd::Identity(d, d));
}

Eigen::VectorXd scalar_vec(double x) {
  Eigen::VectorXd v(1);
  v[0] = x;
  return v;
}

}  // namespace

TEST_CASE("closed-form flow matches the 1d harmonic solution") {
  GaussianTarget g = standard_normal(1);
  // q(t) = q0 cos t + p0 sin t for unit frequency.
  PhaseState end = exact_gaussian_trajectory(g, {scalar_vec(1000.0), scalar_vec(1.0)}, 1.0);
  const double q_expect = 1000.0 * std::cos(1.0) + std::sin(1.0);
  const double p_expect = std::cos(1.0) - 1000.0 * std::sin(1.0);
  CHECK(end.q[0] == doctest::Approx(q_expect).epsilon(1e-12));
  CHECK(end.p[0] == doctest::Approx(p_expect).epsilon(1e-12));

  PhaseState near = exact_gaussian_trajectory(g, {scalar_vec(1.5), scalar_vec(1.0)}, 1.0);
  CHECK(near.q[0] == doctest::Approx(1.5 * std::cos(1.0) + std::sin(1.0)).epsilon(1e-12));
}

TEST_CASE("leapfrog converges to the closed-form trajectory") {
  GaussianTarget g = standard_normal(1);
  PhaseState start{scalar_vec(1000.0), scalar_vec(1.0)};
  PhaseState fine = leapfrog_trajectory(g, start, 1.0, 1e-4);
  const double q_expect = 1000.0 * std::cos(1.0) + std::sin(1.0);
  CHECK(std::abs(fine.q[0] - q_expect) < 1e-3);

  // Error shrinks with the step size.
  PhaseState coarse = leapfrog_trajectory(g, start, 1.0, 1e-2);
  CHECK(std::abs(fine.q[0] - q_expect) < std::abs(coarse.q[0] - q_expect));
}

TEST_CASE("closed-form flow conserves energy") {
  Rng rng(5);
  const Eigen::Index d = 7;
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  GaussianTarget g(a * a.transpose() + Eigen::MatrixXd::Identity(d, d));
  for (int it = 0; it < 20; ++it) {
    PhaseState s{rng.normal_vector(d), rng.normal_vector(d)};
    const double h0 = g.potential(s.q) + 0.5 * s.p.squaredNorm();
    PhaseState e = exact_gaussian_trajectory(g, s, 0.37 * (it + 1));
    const double h1 = g.potential(e.q) + 0.5 * e.p.squaredNorm();
    CHECK(std::abs(h1 - h0) / std::abs(h0) < 1e-10);
  }
}

TEST_CASE("leapfrog energy error is second order in the step size") {
  GaussianTarget g = standard_normal(3);
  Eigen::VectorXd q0(3), p0(3);
  q0 << 1.0, -0.4, 0.7;
  p0 << 0.3, 0.9, -0.2;
  const double h0 = g.potential(q0) + 0.5 * p0.squaredNorm();

  std::vector<double> log_eps, log_err;
  for (double eps : {1e-1, 3.16e-2, 1e-2, 3.16e-3, 1e-3}) {
    PhaseState end = leapfrog_trajectory(g, {q0, p0}, 1.0, eps);
    const double h1 = g.potential(end.q) + 0.5 * end.p.squaredNorm();
    log_eps.push_back(std::log(eps));
    log_err.push_back(std::log(std::abs(h1 - h0)));
  }
  // Least-squares slope of log|dH| against log(eps).
  const double n = static_cast<double>(log_eps.size());
  const double mx = std::accumulate(log_eps.begin(), log_eps.end(), 0.0) / n;
  const double my = std::accumulate(log_err.begin(), log_err.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < log_eps.size(); ++i) {
    sxy += (log_eps[i] - mx) * (log_err[i] - my);
    sxx += (log_eps[i] - mx) * (log_eps[i] - mx);
  }
  CHECK(sxy / sxx >= 1.9);
}

TEST_CASE("leapfrog is reversible under momentum flip") {
  Rng rng(7);
  GaussianTarget g = standard_normal(5);
  PhaseState start{rng.normal_vector(5), rng.normal_vector(5)};

  SUBCASE("uniform schedule") {
    PhaseState fwd = leapfrog_trajectory(g, start, 1.0, 0.01);
    fwd.p = -fwd.p;
    PhaseState back = leapfrog_trajectory(g, fwd, 1.0, 0.01);
    back.p = -back.p;
    CHECK((back.q - start.q).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((back.p - start.p).cwiseAbs().maxCoeff() < 1e-8);
  }

  SUBCASE("shortened final step retraced in reverse order") {
    const double t1 = 1.0, eps = 0.03;  // 33 steps, last one short
    const long n = std::lround(t1 / eps);
    std::vector<double> sched(static_cast<std::size_t>(n), eps);
    sched.back() = t1 - eps * static_cast<double>(n - 1);
    PhaseState fwd = leapfrog_steps(g, start, sched);
    std::vector<double> rev(sched.rbegin(), sched.rend());
    fwd.p = -fwd.p;
    PhaseState back = leapfrog_steps(g, fwd, rev);
    back.p = -back.p;
    CHECK((back.q - start.q).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((back.p - start.p).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("step schedule sums exactly to the requested duration") {
  GaussianTarget g = standard_normal(1);
  // eps does not divide t1; closed form at t1 is the reference.
  PhaseState end = leapfrog_trajectory(g, {scalar_vec(1.0), scalar_vec(0.0)}, 1.0, 0.0299);
  CHECK(end.q[0] == doctest::Approx(std::cos(1.0)).epsilon(1e-3));
  CHECK_THROWS_AS(leapfrog_trajectory(g, {scalar_vec(1.0), scalar_vec(0.0)}, 1.0, -0.1),
                  ArgumentError);
  CHECK_THROWS_AS(leapfrog_trajectory(g, {scalar_vec(1.0), scalar_vec(0.0)}, 1.0, 3.0),
                  ArgumentError);
}

TEST_CASE("stationary point with zero momentum is a fixed point") {
  GaussianTarget g = standard_normal(4);
  HmcConfig cfg;
  cfg.trajectory_time = 1.0;
  cfg.step_size = 0.05;
  StepResult step =
      hmc_step_with_momentum(g, Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4), cfg, 0.5);
  CHECK(step.accepted);
  CHECK(step.q.cwiseAbs().maxCoeff() == 0.0);
  CHECK(step.energy_error == 0.0);
}

TEST_CASE("exact-flow proposals are always accepted") {
  GaussianTarget g = standard_normal(20);
  HmcConfig cfg;
  cfg.integrator = Integrator::exact_gaussian;
  cfg.seed = 99;
  Rng rng(3);
  Eigen::VectorXd q = g.sample_position(rng);
  for (int t = 0; t < 200; ++t) {
    StepResult s = hmc_step(g, q, cfg, rng);
    CHECK(s.accepted);
    CHECK(std::abs(s.energy_error) < 1e-9);
    q = s.q;
  }
}

TEST_CASE("exact flow rejects non-gaussian models") {
  StudentTTarget t(Eigen::MatrixXd::Identity(3, 3), 4.0);
  HmcConfig cfg;
  cfg.integrator = Integrator::exact_gaussian;
  Rng rng(1);
  CHECK_THROWS_AS(hmc_step(t, Eigen::VectorXd::Zero(3), cfg, rng), UnsupportedModelError);
}

TEST_CASE("oversized steps drive the acceptance rate well below one") {
  GaussianTarget g = standard_normal(10);
  HmcConfig cfg;
  cfg.trajectory_time = 10.0;
  cfg.step_size = 10.0;
  cfg.chain_length = 300;
  cfg.seed = 17;
  ChainResult res = run_chain(g, Eigen::VectorXd::Ones(10), cfg);
  CHECK(res.acceptance_rate < 0.5);
}

TEST_CASE("chain estimate of the mean is near zero for a standard normal") {
  GaussianTarget g = standard_normal(1);
  HmcConfig cfg;
  cfg.chain_length = 100000;
  cfg.burn_in = 1000;
  cfg.seed = 2024;
  cfg.thin = 0;
  ChainResult res = run_chain(g, scalar_vec(0.0), cfg, {coordinate_observable(0)});
  CHECK(std::abs(res.estimates[0]) < 0.05);
  CHECK(res.acceptance_rate > 0.9);
}

TEST_CASE("constant observables are reproduced exactly") {
  GaussianTarget g = standard_normal(2);
  HmcConfig cfg;
  cfg.chain_length = 50;
  cfg.seed = 8;
  // 3.5 sums and divides exactly in binary, so equality is exact.
  Observable constant{"constant", [](const Eigen::VectorXd&) { return 3.5; }, 0.0};
  ChainResult res = run_chain(g, Eigen::VectorXd::Zero(2), cfg, {constant});
  CHECK(res.estimates[0] == 3.5);
}

TEST_CASE("first-coordinate mean vanishes for a correlated 100d gaussian") {
  GaussianTarget g(GaussianTarget::exp_sq_decay_precision(100));
  HmcConfig cfg;
  cfg.integrator = Integrator::exact_gaussian;
  cfg.chain_length = 1000000;
  cfg.burn_in = 0;
  cfg.thin = 0;
  cfg.seed = 619;
  ChainResult res = run_chain(g, Eigen::VectorXd::Zero(100), cfg, {coordinate_observable(0)});
  CHECK(std::abs(res.estimates[0]) <= 0.05);
}

TEST_CASE("chain covariance matches the target in 2d") {
  Eigen::MatrixXd lambda(2, 2);
  lambda << 2.0, -0.6, -0.6, 1.0;
  GaussianTarget g(lambda);
  const Eigen::MatrixXd sigma = lambda.inverse();

  HmcConfig cfg;
  cfg.chain_length = 110000;
  cfg.burn_in = 10000;
  cfg.seed = 31;
  ChainResult res = run_chain(g, Eigen::VectorXd::Zero(2), cfg);

  Eigen::Matrix2d acc = Eigen::Matrix2d::Zero();
  long used = 0;
  for (long t = res.burn_in; t < res.chain_length; ++t) {
    const Eigen::Vector2d x = res.samples.row(t);
    acc += x * x.transpose();
    ++used;
  }
  acc /= static_cast<double>(used);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(std::abs(acc(i, j) - sigma(i, j)) < 0.05 * std::abs(sigma(i, j)));
}

TEST_CASE("momentum norm stays near sqrt(d) along exact trajectories") {
  const Eigen::Index d = 400;
  GaussianTarget g = standard_normal(d);
  Rng rng(47);
  const double t1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double threshold = 4.0 * std::pow(static_cast<double>(d), 0.75);
  int exceed = 0;
  const int trials = 1000;
  for (int k = 0; k < trials; ++k) {
    Eigen::VectorXd q = g.sample_position(rng);
    Eigen::VectorXd p = rng.normal_vector(d);
    double sup = 0.0;
    for (int j = 0; j <= 64; ++j) {
      const double t = t1 * static_cast<double>(j) / 64.0;
      const double c = std::cos(t), s = std::sin(t);
      const double norm2 = (p * c - q * s).squaredNorm();
      sup = std::max(sup, std::abs(norm2 - static_cast<double>(d)));
    }
    if (sup > threshold) ++exceed;
  }
  CHECK(static_cast<double>(exceed) / trials < 0.01);
}

TEST_CASE("config defaults resolve from the dimension") {
  HmcConfig cfg;
  CHECK(cfg.resolved_time(100) == doctest::Approx(0.1));
  CHECK(cfg.resolved_step(100) == doctest::Approx(0.005));
  cfg.trajectory_time = 2.0;
  CHECK(cfg.resolved_time(100) == doctest::Approx(2.0));
  CHECK(cfg.resolved_step(100) == doctest::Approx(0.1));
}

TEST_CASE("run_chain validates its window and start point") {
  GaussianTarget g = standard_normal(2);
  HmcConfig cfg;
  cfg.chain_length = 10;
  cfg.burn_in = 10;
  CHECK_THROWS_AS(run_chain(g, Eigen::VectorXd::Zero(2), cfg), ArgumentError);
  cfg.burn_in = 0;
  CHECK_THROWS_AS(run_chain(g, Eigen::VectorXd::Zero(3), cfg), ArgumentError);
}

TEST_CASE("independent chains are deterministic and thread-count invariant") {
  GaussianTarget g = standard_normal(3);
  HmcConfig cfg;
  cfg.chain_length = 200;
  cfg.seed = 5;
  auto serial = run_chains(g, Eigen::VectorXd::Ones(3), cfg, 4, {}, 1);
  auto parallel = run_chains(g, Eigen::VectorXd::Ones(3), cfg, 4, {}, 4);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t k = 0; k < serial.size(); ++k) {
    CHECK((serial[k].samples - parallel[k].samples).cwiseAbs().maxCoeff() == 0.0);
    CHECK(serial[k].acceptance_rate == parallel[k].acceptance_rate);
  }
  // Distinct chains explore distinct paths.
  CHECK((serial[0].samples - serial[1].samples).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("step-size tuning reaches the target acceptance window") {
  GaussianTarget g = standard_normal(100);
  HmcConfig cfg;
  // Long trajectories so mid-range acceptance rates are reachable at all.
  cfg.trajectory_time = 2.0;
  cfg.seed = 11;
  Rng rng(13);
  Eigen::VectorXd q0 = g.sample_position(rng);

  const long pilot = 2000;
  const double eps = tune_step_size(g, q0, cfg, 0.65, pilot);

  // Replaying the pilot at the returned eps lands within the target window.
  HmcConfig replay = cfg;
  replay.step_size = eps;
  replay.chain_length = pilot;
  replay.thin = 0;
  const double pilot_acc = run_chain(g, q0, replay).acceptance_rate;
  CHECK(pilot_acc >= 0.60);
  CHECK(pilot_acc <= 0.70);

  // An independent run stays near the window.
  replay.seed = 1631;
  replay.chain_length = 8000;
  const double acc = run_chain(g, q0, replay).acceptance_rate;
  CHECK(acc > 0.55);
  CHECK(acc < 0.75);

  CHECK_THROWS_AS(tune_step_size(g, q0, cfg, 0.0), ArgumentError);
  CHECK_THROWS_AS(tune_step_size(g, q0, cfg, 1.0), ArgumentError);

  HmcConfig exact = cfg;
  exact.integrator = Integrator::exact_gaussian;
  exact.step_size = 0.123;
  CHECK(tune_step_size(g, q0, exact, 0.65) == doctest::Approx(0.123));
}

TEST_CASE("estimator averages exactly over the post-burn-in window") {
  GaussianTarget g = standard_normal(2);
  HmcConfig cfg;
  cfg.chain_length = 500;
  cfg.burn_in = 100;
  cfg.seed = 77;
  ChainResult res = run_chain(g, Eigen::VectorXd::Ones(2), cfg, {coordinate_observable(1)});
  double manual = 0.0;
  for (long t = cfg.burn_in; t < cfg.chain_length; ++t) manual += res.samples(t, 1);
  manual /= static_cast<double>(cfg.chain_length - cfg.burn_in);
  CHECK(res.estimates[0] == doctest::Approx(manual).epsilon(1e-14));
  CHECK(res.posterior_mean[1] == doctest::Approx(manual).epsilon(1e-14));
}
