#pragma once

#include <Eigen/Dense>

#include "hmcgeo/rng.hpp"
#include "hmcgeo/transport.hpp"

namespace hmcgeo {

// Ingredients of the chain concentration bound. The deviation radius r is
// measured in units of the chain-metric Lipschitz norm of the observable;
// `lip` is carried along so callers can convert absolute deviations.
struct ConcentrationInputs {
  double kappa = 0.0;        // coarse Ricci curvature lower bound
  double sigma_sq = 0.0;     // coarse diffusion constant, sup over states
  double local_dim = 0.0;    // local dimension n_q
  double granularity = 0.0;  // sigma_infinity
  double lip = 1.0;          // Lipschitz norm of the observable
  long chain_length = 1;     // T
  long burn_in = 0;          // T0, allowed up to T
  double radius = 1.0;       // r

  // Throws NegativeCurvatureError for kappa <= 0 and ArgumentError for any
  // other invalid field.
  void validate() const;
};

// V^2(kappa, T) = (1/(kappa T)) (1 + T0/T) sigma^2/(n kappa).
double variance_term(const ConcentrationInputs& in);

enum class BoundRegime { gaussian, exponential };

struct BoundResult {
  double probability = 1.0;
  BoundRegime regime = BoundRegime::gaussian;
};

// Two-regime tail bound for P(|I_hat - E I_hat| >= r lip), capped at 1:
// Gaussian branch 2 exp(-r^2/(16 V^2)) while r < 4 V^2 kappa T/(3 sigma_inf),
// exponential branch 2 exp(-kappa T r/(12 sigma_inf)) otherwise.
BoundResult concentration_bound(const ConcentrationInputs& in);

// Analytic ingredient values for a Gaussian target with precision matrix
// lambda: kappa = Tr(lambda)/(3 d^2), sigma^2 = n = d, sigma_inf = 2 sqrt(d),
// and the coordinate-function Lipschitz norm 2/sqrt(d). chain_length,
// burn_in and radius keep their defaults.
ConcentrationInputs gaussian_ingredients(const Eigen::MatrixXd& precision, Eigen::Index d);

// Monte Carlo coarse diffusion constant: half the mean squared distance over
// n independent kernel sample pairs.
MonteCarloValue diffusion_constant_mc(const KernelSampler& sampler, long n,
                                      const Metric& metric, Rng& rng);

// Upper-bound estimate of the local dimension, restricting the defining
// infimum to linear 1-Lipschitz functionals: trace over top eigenvalue of
// the displacement second-moment matrix.
double local_dimension_estimate(const KernelSampler& sampler, long n, Rng& rng);

// Lipschitz norm conversion into the trajectory metric: 2/sqrt(d) times the
// Euclidean norm.
double jacobi_lipschitz(double euclidean_lip, long d);

// Smallest T whose bound does not exceed target_prob, inverting whichever
// regime is active at the solution. Throws SolverError when the target is
// unattainable near the regime boundary.
long required_chain_length(ConcentrationInputs in, double target_prob);

}  // namespace hmcgeo
