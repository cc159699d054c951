#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hmcgeo/rng.hpp"
#include "hmcgeo/targets.hpp"

namespace hmcgeo {

// Position/momentum pair for Hamiltonian dynamics with H = V(q) + |p|^2 / 2.
struct PhaseState {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
};

enum class Integrator { leapfrog, exact_gaussian };

struct HmcConfig {
  // Trajectory duration t1; values <= 0 resolve to dim^{-1/2}.
  double trajectory_time = 0.0;
  // Leapfrog step size; values <= 0 resolve to t1 / 20.
  double step_size = 0.0;
  long chain_length = 1000;  // steps T
  long burn_in = 0;          // steps discarded from estimators
  std::uint64_t seed = 0;
  Integrator integrator = Integrator::leapfrog;
  // Sample storage stride: 1 keeps every state, 0 disables storage.
  long thin = 1;

  double resolved_time(Eigen::Index dim) const;
  double resolved_step(Eigen::Index dim) const;
};

// Named function of position with its Euclidean Lipschitz constant, used by
// estimators and by the concentration bound inputs.
struct Observable {
  std::string name;
  std::function<double(const Eigen::VectorXd&)> f;
  double euclidean_lipschitz = 1.0;
};

Observable coordinate_observable(Eigen::Index i);

// One proposal/accept cycle. `energy` is the trajectory energy measured at
// the start point with the freshly drawn momentum; `energy_error` is
// H(end) - H(start) for the integrated proposal.
struct StepResult {
  Eigen::VectorXd q;
  bool accepted = false;
  bool integration_failed = false;
  double energy = 0.0;
  double energy_error = 0.0;
};

// Leapfrog with an explicit step schedule: half-kick, drift, half-kick per
// entry. Throws IntegrationError if the state leaves the finite domain.
PhaseState leapfrog_steps(const TargetModel& model, PhaseState state,
                          std::span<const double> steps);

// Integrates for total time t1 using round(t1/eps) steps, the last one
// shortened (or stretched) so the durations sum exactly to t1.
PhaseState leapfrog_trajectory(const TargetModel& model, PhaseState state, double t1,
                               double eps);

// Closed-form Hamiltonian flow for Gaussian targets. In the eigenbasis of the
// precision, each coordinate with eigenvalue mu evolves as
//   q(t) = q(0) cos(w t) + p(0) sin(w t) / w,
//   p(t) = p(0) cos(w t) - q(0) w sin(w t),   w = sqrt(mu).
PhaseState exact_gaussian_trajectory(const GaussianTarget& model, PhaseState state,
                                     double t1);

// Proposal with caller-supplied momentum and accept threshold in [0, 1).
// Accepts iff accept_uniform < min(1, exp(-energy_error)). A non-finite or
// failed integration counts as a rejection.
StepResult hmc_step_with_momentum(const TargetModel& model, const Eigen::VectorXd& q,
                                  const Eigen::VectorXd& p, const HmcConfig& cfg,
                                  double accept_uniform);

// Full step: momentum refreshed from N(0, I), then accept/reject. Draws the
// momentum first and the accept uniform second from `rng`.
StepResult hmc_step(const TargetModel& model, const Eigen::VectorXd& q,
                    const HmcConfig& cfg, Rng& rng);

struct ChainResult {
  Eigen::VectorXd q0;
  // States after each stored step; with thin == 1, row t-1 is the state after
  // step t and the start of step t+1.
  Eigen::MatrixXd samples;
  long thin = 1;
  // Per-step trajectory energies (start point + fresh momentum) and accept
  // flags, always recorded for every step.
  Eigen::VectorXd energies;
  std::vector<char> accepted;
  double acceptance_rate = 0.0;
  long integration_failures = 0;
  // Mean state over steps burn_in+1 .. T.
  Eigen::VectorXd posterior_mean;
  // One estimate per requested observable, averaged over the same window.
  std::vector<double> estimates;
  long chain_length = 0;
  long burn_in = 0;
  double trajectory_time = 0.0;
  double step_size = 0.0;
};

ChainResult run_chain(const TargetModel& model, const Eigen::VectorXd& q0,
                      const HmcConfig& cfg, const std::vector<Observable>& observables = {});

// Runs several independent chains; chain k is seeded with cfg.seed + k. With
// threads > 1 the chains run concurrently against the shared read-only model;
// results are identical to the sequential order.
std::vector<ChainResult> run_chains(const TargetModel& model, const Eigen::VectorXd& q0,
                                    const HmcConfig& cfg, int n_chains,
                                    const std::vector<Observable>& observables = {},
                                    int threads = 1);

// Searches for a step size whose pilot-run acceptance rate lies within 0.05
// of `target_accept`, using doubling to bracket and log-space bisection. The
// pilot runs share one seed, so the search is deterministic. Throws
// TuningError (carrying the best candidate) if the budget of 50 pilot runs is
// exhausted. The exact-flow integrator accepts every proposal regardless of
// eps, so the resolved initial step is returned unchanged.
double tune_step_size(const TargetModel& model, const Eigen::VectorXd& q0, HmcConfig cfg,
                      double target_accept, long pilot_steps = 100);

}  // namespace hmcgeo
