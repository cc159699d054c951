#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "hmcgeo/rng.hpp"

namespace hmcgeo {

// Equal-weight point cloud in R^d.
struct EmpiricalMeasure {
  Eigen::MatrixXd points;  // n x d, weight 1/n each

  explicit EmpiricalMeasure(Eigen::MatrixXd pts);
  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
};

using Metric = std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

Metric euclidean_metric();
// Great-circle distance for unit vectors, acos of the clamped inner product.
Metric sphere_geodesic_metric();

// Optimal matching between two equal-size measures: row i of the first pairs
// with row assignment[i] of the second, each pair carrying mass 1/n.
struct CouplingPlan {
  std::vector<long> assignment;
  double cost = 0.0;  // sum of pair distances / n

  bool is_permutation() const;
};

struct W1Result {
  double distance = 0.0;
  CouplingPlan plan;
};

// Exact Wasserstein-1 distance between equal-size empirical measures via a
// dense Jonker-Volgenant assignment solve. The returned optimum is certified
// against the dual potentials; sizes are capped at 4096.
W1Result wasserstein1(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                      const Metric& metric);

using KernelSampler = std::function<Eigen::VectorXd(Rng&)>;

struct MonteCarloValue {
  double value = 0.0;
  double std_error = 0.0;
};

// Empirical coarse Ricci curvature of a kernel pair at base distance rho:
// kappa = 1 - W1(P_x^n, P_y^n) / rho. The two samplers are fed identical
// per-index RNG substreams, so common random numbers couple the clouds;
// the standard error comes from a paired bootstrap over point indices.
struct RicciEstimate {
  double kappa = 0.0;
  double w1 = 0.0;
  double rho = 0.0;
  double std_error = 0.0;
  long resamples = 0;
};

RicciEstimate coarse_ricci_empirical(const KernelSampler& sample_x,
                                     const KernelSampler& sample_y, double rho, long n,
                                     const Metric& metric, Rng& rng, long resamples = 20);

// Transport bound for uniform sphere kernels of geodesic radius r whose
// centers are eps apart: eps (1 - (sin^2 r / 2) (d-1)/d), an upper bound on
// W1 modulo O(sin^4 r) terms.
double sphere_kernel_w1_bound(double eps, double r, long d);

// Monte Carlo average of the rotation-coupling path length
// eps sqrt(1 - sin^2 r sin^2 phi) with phi the kernel latitude, whose density
// is proportional to sin^{d-2}.
MonteCarloValue sphere_rotation_coupling_cost(double eps, double r, long d, long n, Rng& rng);

// Uniform point at geodesic distance r from a unit-norm center: walks along a
// uniformly drawn unit tangent. Throws for a non-unit center.
Eigen::VectorXd sphere_kernel_point(const Eigen::VectorXd& center, double r, Rng& rng);

}  // namespace hmcgeo
