#include "hmcgeo/hmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "hmcgeo/errors.hpp"

namespace hmcgeo {

namespace {

bool finite(const Eigen::VectorXd& v) { return v.allFinite(); }

double potential_checked(const TargetModel& model, const Eigen::VectorXd& q, long step) {
  const double v = model.potential(q);
  if (!std::isfinite(v)) throw IntegrationError("non-finite potential", step);
  return v;
}

}  // namespace

double HmcConfig::resolved_time(Eigen::Index dim) const {
  if (trajectory_time > 0.0) return trajectory_time;
  if (dim <= 0) throw ArgumentError("HmcConfig: dimension must be positive");
  return 1.0 / std::sqrt(static_cast<double>(dim));
}

double HmcConfig::resolved_step(Eigen::Index dim) const {
  if (step_size > 0.0) return step_size;
  return resolved_time(dim) / 20.0;
}

Observable coordinate_observable(Eigen::Index i) {
  return Observable{"q" + std::to_string(i),
                    [i](const Eigen::VectorXd& q) { return q[i]; }, 1.0};
}

PhaseState leapfrog_steps(const TargetModel& model, PhaseState state,
                          std::span<const double> steps) {
  if (state.q.size() != model.dim() || state.p.size() != model.dim()) {
    throw ArgumentError("leapfrog_steps: state dimension mismatch");
  }
  long index = 0;
  for (const double eps : steps) {
    Eigen::VectorXd g = model.gradient(state.q);
    if (!finite(g)) throw IntegrationError("non-finite gradient", index);
    state.p -= 0.5 * eps * g;
    state.q += eps * state.p;
    if (!finite(state.q)) throw IntegrationError("non-finite position", index);
    g = model.gradient(state.q);
    if (!finite(g)) throw IntegrationError("non-finite gradient", index);
    state.p -= 0.5 * eps * g;
    if (!finite(state.p)) throw IntegrationError("non-finite momentum", index);
    ++index;
  }
  return state;
}

PhaseState leapfrog_trajectory(const TargetModel& model, PhaseState state, double t1,
                               double eps) {
  if (!(t1 > 0.0) || !(eps > 0.0)) {
    throw ArgumentError("leapfrog_trajectory: t1 and eps must be positive");
  }
  const long n = std::lround(t1 / eps);
  if (n < 1) throw ArgumentError("leapfrog_trajectory: step size too large for duration");
  std::vector<double> steps(static_cast<std::size_t>(n), eps);
  steps.back() = t1 - eps * static_cast<double>(n - 1);
  return leapfrog_steps(model, std::move(state), steps);
}

PhaseState exact_gaussian_trajectory(const GaussianTarget& model, PhaseState state,
                                     double t1) {
  if (state.q.size() != model.dim() || state.p.size() != model.dim()) {
    throw ArgumentError("exact_gaussian_trajectory: state dimension mismatch");
  }
  const Eigen::MatrixXd& u = model.precision_eigenvectors();
  const Eigen::VectorXd& mu = model.precision_eigenvalues();
  Eigen::VectorXd a = u.transpose() * state.q;
  Eigen::VectorXd b = u.transpose() * state.p;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double w = std::sqrt(mu[i]);
    const double c = std::cos(w * t1);
    const double s = std::sin(w * t1);
    const double ai = a[i], bi = b[i];
    a[i] = ai * c + bi * s / w;
    b[i] = bi * c - ai * w * s;
  }
  return PhaseState{u * a, u * b};
}

StepResult hmc_step_with_momentum(const TargetModel& model, const Eigen::VectorXd& q,
                                  const Eigen::VectorXd& p, const HmcConfig& cfg,
                                  double accept_uniform) {
  const double t1 = cfg.resolved_time(model.dim());
  const double v0 = model.potential(q);
  const double h0 = v0 + 0.5 * p.squaredNorm();

  StepResult out;
  out.q = q;
  out.energy = h0;

  PhaseState end;
  try {
    if (cfg.integrator == Integrator::exact_gaussian) {
      const auto* gaussian = dynamic_cast<const GaussianTarget*>(&model);
      if (gaussian == nullptr) {
        throw UnsupportedModelError(
            "hmc_step: exact flow integrator requires a Gaussian target");
      }
      end = exact_gaussian_trajectory(*gaussian, PhaseState{q, p}, t1);
    } else {
      end = leapfrog_trajectory(model, PhaseState{q, p}, t1, cfg.resolved_step(model.dim()));
    }
  } catch (const IntegrationError&) {
    out.integration_failed = true;
    out.energy_error = std::numeric_limits<double>::infinity();
    return out;  // counted as a rejection
  }

  const double h1 = model.potential(end.q) + 0.5 * end.p.squaredNorm();
  out.energy_error = h1 - h0;
  if (!std::isfinite(h1)) {
    out.integration_failed = true;
    return out;
  }
  // alpha = min(1, exp(h0 - h1)); accept iff u < alpha.
  if (accept_uniform < std::exp(std::min(0.0, h0 - h1))) {
    out.accepted = true;
    out.q = std::move(end.q);
  }
  return out;
}

StepResult hmc_step(const TargetModel& model, const Eigen::VectorXd& q,
                    const HmcConfig& cfg, Rng& rng) {
  const Eigen::VectorXd p = rng.normal_vector(model.dim());
  const double u = rng.uniform();
  return hmc_step_with_momentum(model, q, p, cfg, u);
}

ChainResult run_chain(const TargetModel& model, const Eigen::VectorXd& q0,
                      const HmcConfig& cfg, const std::vector<Observable>& observables) {
  if (q0.size() != model.dim()) throw ArgumentError("run_chain: q0 dimension mismatch");
  if (cfg.chain_length < 1) throw ArgumentError("run_chain: chain_length must be >= 1");
  if (cfg.burn_in < 0 || cfg.burn_in >= cfg.chain_length) {
    throw ArgumentError("run_chain: burn_in must lie in [0, chain_length)");
  }
  if (cfg.thin < 0) throw ArgumentError("run_chain: thin must be >= 0");
  (void)potential_checked(model, q0, 0);

  const long T = cfg.chain_length;
  const long T0 = cfg.burn_in;
  const Eigen::Index d = model.dim();

  ChainResult res;
  res.q0 = q0;
  res.thin = cfg.thin;
  res.energies.resize(T);
  res.accepted.resize(static_cast<std::size_t>(T));
  res.chain_length = T;
  res.burn_in = T0;
  res.trajectory_time = cfg.resolved_time(d);
  res.step_size = cfg.resolved_step(d);

  const long stored = cfg.thin > 0 ? T / cfg.thin : 0;
  res.samples.resize(stored, d);

  Rng rng(cfg.seed);
  Eigen::VectorXd state = q0;
  Eigen::VectorXd mean_acc = Eigen::VectorXd::Zero(d);
  std::vector<double> obs_acc(observables.size(), 0.0);
  long accepted_count = 0;

  for (long t = 1; t <= T; ++t) {
    StepResult step = hmc_step(model, state, cfg, rng);
    state = std::move(step.q);
    res.energies[t - 1] = step.energy;
    res.accepted[static_cast<std::size_t>(t - 1)] = step.accepted ? 1 : 0;
    accepted_count += step.accepted ? 1 : 0;
    res.integration_failures += step.integration_failed ? 1 : 0;
    if (cfg.thin > 0 && t % cfg.thin == 0) res.samples.row(t / cfg.thin - 1) = state;
    if (t > T0) {
      mean_acc += state;
      for (std::size_t k = 0; k < observables.size(); ++k) obs_acc[k] += observables[k].f(state);
    }
  }

  const double window = static_cast<double>(T - T0);
  res.acceptance_rate = static_cast<double>(accepted_count) / static_cast<double>(T);
  res.posterior_mean = mean_acc / window;
  res.estimates.resize(observables.size());
  for (std::size_t k = 0; k < observables.size(); ++k) res.estimates[k] = obs_acc[k] / window;
  return res;
}

std::vector<ChainResult> run_chains(const TargetModel& model, const Eigen::VectorXd& q0,
                                    const HmcConfig& cfg, int n_chains,
                                    const std::vector<Observable>& observables,
                                    int threads) {
  if (n_chains < 1) throw ArgumentError("run_chains: n_chains must be >= 1");
  std::vector<ChainResult> out(static_cast<std::size_t>(n_chains));
  auto run_one = [&](int k) {
    HmcConfig chain_cfg = cfg;
    chain_cfg.seed = cfg.seed + static_cast<std::uint64_t>(k);
    out[static_cast<std::size_t>(k)] = run_chain(model, q0, chain_cfg, observables);
  };
  if (threads <= 1 || n_chains == 1) {
    for (int k = 0; k < n_chains; ++k) run_one(k);
    return out;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  const int workers = std::min(threads, n_chains);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int k = next.fetch_add(1); k < n_chains; k = next.fetch_add(1)) run_one(k);
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

double tune_step_size(const TargetModel& model, const Eigen::VectorXd& q0, HmcConfig cfg,
                      double target_accept, long pilot_steps) {
  if (!(target_accept > 0.0) || !(target_accept < 1.0)) {
    throw ArgumentError("tune_step_size: target acceptance must lie in (0, 1)");
  }
  const double initial = cfg.resolved_step(model.dim());
  if (cfg.integrator == Integrator::exact_gaussian) return initial;

  const double tol = 0.05;
  int budget = 50;
  double best_eps = initial;
  double best_gap = std::numeric_limits<double>::infinity();

  // Pilot runs share cfg.seed: acceptance is a deterministic function of eps.
  auto acceptance = [&](double eps) {
    HmcConfig pilot = cfg;
    pilot.step_size = eps;
    pilot.chain_length = pilot_steps;
    pilot.burn_in = 0;
    pilot.thin = 0;
    --budget;
    const double a = run_chain(model, q0, pilot).acceptance_rate;
    if (std::abs(a - target_accept) < best_gap) {
      best_gap = std::abs(a - target_accept);
      best_eps = eps;
    }
    return a;
  };

  double eps = initial;
  double acc = acceptance(eps);
  if (std::abs(acc - target_accept) <= tol) return eps;

  // Acceptance decreases with step size: double/halve until the target is
  // bracketed, then bisect in log space.
  double lo = eps, hi = eps;  // acceptance(lo) > target > acceptance(hi)
  if (acc > target_accept) {
    while (budget > 0) {
      hi *= 2.0;
      const double a = acceptance(hi);
      if (std::abs(a - target_accept) <= tol) return hi;
      if (a < target_accept) break;
      lo = hi;
    }
  } else {
    while (budget > 0) {
      lo *= 0.5;
      const double a = acceptance(lo);
      if (std::abs(a - target_accept) <= tol) return lo;
      if (a > target_accept) break;
      hi = lo;
    }
  }
  while (budget > 0) {
    const double mid = std::sqrt(lo * hi);
    const double a = acceptance(mid);
    if (std::abs(a - target_accept) <= tol) return mid;
    if (a > target_accept) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw TuningError("tune_step_size: pilot budget exhausted", best_eps);
}

}  // namespace hmcgeo
