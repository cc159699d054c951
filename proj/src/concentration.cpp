#include "hmcgeo/concentration.hpp"

#include <cmath>

#include "hmcgeo/errors.hpp"

namespace hmcgeo {

void ConcentrationInputs::validate() const {
  if (!(kappa > 0.0)) {
    throw NegativeCurvatureError("concentration: bound inapplicable, curvature must be positive");
  }
  if (!(sigma_sq > 0.0)) throw ArgumentError("concentration: sigma_sq must be positive");
  if (!(local_dim > 0.0)) throw ArgumentError("concentration: local_dim must be positive");
  if (!(granularity > 0.0)) throw ArgumentError("concentration: granularity must be positive");
  if (!(lip > 0.0)) throw ArgumentError("concentration: lip must be positive");
  if (chain_length < 1) throw ArgumentError("concentration: chain_length must be positive");
  // burn_in == chain_length is allowed: it only scales the variance term.
  if (burn_in < 0 || burn_in > chain_length) {
    throw ArgumentError("concentration: burn_in must lie in [0, chain_length]");
  }
  if (!(radius > 0.0)) throw ArgumentError("concentration: radius must be positive");
}

double variance_term(const ConcentrationInputs& in) {
  in.validate();
  const double t = static_cast<double>(in.chain_length);
  const double t0 = static_cast<double>(in.burn_in);
  return (1.0 / (in.kappa * t)) * (1.0 + t0 / t) * in.sigma_sq / (in.local_dim * in.kappa);
}

BoundResult concentration_bound(const ConcentrationInputs& in) {
  const double v2 = variance_term(in);
  const double t = static_cast<double>(in.chain_length);
  const double threshold = 4.0 * v2 * in.kappa * t / (3.0 * in.granularity);

  BoundResult out;
  if (in.radius < threshold) {
    out.regime = BoundRegime::gaussian;
    out.probability = 2.0 * std::exp(-in.radius * in.radius / (16.0 * v2));
  } else {
    out.regime = BoundRegime::exponential;
    out.probability = 2.0 * std::exp(-in.kappa * t * in.radius / (12.0 * in.granularity));
  }
  out.probability = std::min(out.probability, 1.0);
  return out;
}

ConcentrationInputs gaussian_ingredients(const Eigen::MatrixXd& precision, Eigen::Index d) {
  if (precision.rows() != d || precision.cols() != d) {
    throw ArgumentError("gaussian_ingredients: precision must be d x d");
  }
  if (!precision.isApprox(precision.transpose(), 1e-10)) {
    throw ArgumentError("gaussian_ingredients: precision must be symmetric");
  }
  const double trace = precision.trace();
  if (!(trace > 0.0)) throw ArgumentError("gaussian_ingredients: trace must be positive");

  const auto dd = static_cast<double>(d);
  ConcentrationInputs in;
  in.kappa = trace / (3.0 * dd * dd);
  in.sigma_sq = dd;
  in.local_dim = dd;
  in.granularity = 2.0 * std::sqrt(dd);
  in.lip = jacobi_lipschitz(1.0, d);
  return in;
}

MonteCarloValue diffusion_constant_mc(const KernelSampler& sampler, long n,
                                      const Metric& metric, Rng& rng) {
  if (n < 2) throw ArgumentError("diffusion_constant_mc: need at least two pairs");
  double sum = 0.0, sumsq = 0.0;
  for (long i = 0; i < n; ++i) {
    const Eigen::VectorXd x = sampler(rng);
    const Eigen::VectorXd y = sampler(rng);
    const double rho = metric(x, y);
    const double half_sq = 0.5 * rho * rho;
    sum += half_sq;
    sumsq += half_sq * half_sq;
  }
  MonteCarloValue out;
  const double nn = static_cast<double>(n);
  out.value = sum / nn;
  const double var = std::max(0.0, (sumsq - nn * out.value * out.value) / (nn - 1.0));
  out.std_error = std::sqrt(var / nn);
  return out;
}

double local_dimension_estimate(const KernelSampler& sampler, long n, Rng& rng) {
  if (n < 2) throw ArgumentError("local_dimension_estimate: need at least two pairs");
  Eigen::MatrixXd second_moment;
  for (long i = 0; i < n; ++i) {
    const Eigen::VectorXd x = sampler(rng);
    const Eigen::VectorXd y = sampler(rng);
    const Eigen::VectorXd delta = x - y;
    if (i == 0) second_moment = Eigen::MatrixXd::Zero(delta.size(), delta.size());
    second_moment.selfadjointView<Eigen::Lower>().rankUpdate(delta);
  }
  second_moment /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(second_moment);
  if (eig.info() != Eigen::Success) {
    throw SolverError("local_dimension_estimate: eigensolver failed");
  }
  const double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0)) {
    throw UndefinedCurvatureError("local_dimension_estimate: kernel has no displacement");
  }
  // trace / top eigenvalue; only the lower triangle was filled.
  const double trace = second_moment.diagonal().sum();
  return trace / top;
}

double jacobi_lipschitz(double euclidean_lip, long d) {
  if (d < 1) throw ArgumentError("jacobi_lipschitz: dimension must be at least 1");
  if (euclidean_lip < 0.0) throw ArgumentError("jacobi_lipschitz: norm must be nonnegative");
  return euclidean_lip * 2.0 / std::sqrt(static_cast<double>(d));
}

long required_chain_length(ConcentrationInputs in, double target_prob) {
  if (!(target_prob > 0.0) || !(target_prob < 1.0)) {
    throw ArgumentError("required_chain_length: target probability must lie in (0, 1)");
  }
  in.chain_length = std::max(1L, in.burn_in);
  in.validate();
  const double log_term = std::log(2.0 / target_prob);
  const double t0 = static_cast<double>(in.burn_in);
  const double r = in.radius;

  // Gaussian branch: r^2/(16 V^2(T)) = log(2/target) is quadratic in 1/T.
  const double a = 16.0 * in.sigma_sq / (in.local_dim * in.kappa * in.kappa);
  const double rhs = r * r / (a * log_term);
  double inv_t;
  if (t0 > 0.0) {
    inv_t = (-1.0 + std::sqrt(1.0 + 4.0 * t0 * rhs)) / (2.0 * t0);
  } else {
    inv_t = rhs;
  }
  const auto gaussian_t =
      std::max(in.chain_length, static_cast<long>(std::ceil(1.0 / inv_t)));

  auto regime_at = [&](long t) {
    ConcentrationInputs probe = in;
    probe.chain_length = t;
    return concentration_bound(probe).regime;
  };
  if (regime_at(gaussian_t) == BoundRegime::gaussian) return gaussian_t;

  // Exponential branch: kappa T r / (12 sigma_inf) = log(2/target).
  const auto exp_t = std::max(
      in.chain_length,
      static_cast<long>(std::ceil(12.0 * in.granularity * log_term / (in.kappa * r))));
  if (regime_at(exp_t) == BoundRegime::exponential) return exp_t;

  throw SolverError("required_chain_length: target falls between the bound regimes");
}

}  // namespace hmcgeo
