#include "hmcgeo/targets.hpp"

#include <cmath>
#include <string>

#include "hmcgeo/errors.hpp"

namespace hmcgeo {

namespace {

constexpr double kSymmetryTol = 1e-12;

void validate_precision(const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() == 0 || m.rows() != m.cols()) {
    throw ArgumentError(std::string(what) + ": precision must be square and non-empty");
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale) {
    throw ArgumentError(std::string(what) + ": precision must be symmetric");
  }
}

}  // namespace

void TargetModel::check_dim(const Eigen::VectorXd& x, const char* what) const {
  if (x.size() != dim()) {
    throw ArgumentError(std::string(what) + ": expected dimension " + std::to_string(dim()) +
                        ", got " + std::to_string(x.size()));
  }
}

GaussianTarget::GaussianTarget(Eigen::MatrixXd precision) : precision_(std::move(precision)) {
  validate_precision(precision_, "GaussianTarget");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(precision_);
  if (es.info() != Eigen::Success) {
    throw SolverError("GaussianTarget: eigendecomposition of precision failed");
  }
  eigenvalues_ = es.eigenvalues();
  eigenvectors_ = es.eigenvectors();
  if (eigenvalues_.minCoeff() <= 0.0) {
    throw ArgumentError("GaussianTarget: precision must be positive definite");
  }
}

double GaussianTarget::potential(const Eigen::VectorXd& q) const {
  check_dim(q, "GaussianTarget::potential");
  return 0.5 * q.dot(precision_ * q);
}

Eigen::VectorXd GaussianTarget::gradient(const Eigen::VectorXd& q) const {
  check_dim(q, "GaussianTarget::gradient");
  return precision_ * q;
}

double GaussianTarget::hessian_quadratic_form(const Eigen::VectorXd& q,
                                              const Eigen::VectorXd& u) const {
  check_dim(q, "GaussianTarget::hessian_quadratic_form");
  check_dim(u, "GaussianTarget::hessian_quadratic_form");
  return u.dot(precision_ * u);
}

Eigen::VectorXd GaussianTarget::sample_position(Rng& rng) const {
  // N(0, Lambda^{-1}) = U diag(mu^{-1/2}) z in the eigenbasis.
  Eigen::VectorXd z = rng.normal_vector(dim());
  return eigenvectors_ * (z.array() / eigenvalues_.array().sqrt()).matrix();
}

Eigen::MatrixXd GaussianTarget::identity_precision(Eigen::Index d) {
  return Eigen::MatrixXd::Identity(d, d);
}

Eigen::MatrixXd GaussianTarget::exp_sq_decay_covariance(Eigen::Index d) {
  Eigen::MatrixXd sigma(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double gap = static_cast<double>(i - j);
      sigma(i, j) = std::exp(-gap * gap);
    }
  }
  return sigma;
}

Eigen::MatrixXd GaussianTarget::exp_sq_decay_precision(Eigen::Index d) {
  const Eigen::MatrixXd sigma = exp_sq_decay_covariance(d);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw SolverError("exp_sq_decay_precision: covariance is not positive definite");
  }
  Eigen::MatrixXd lambda = llt.solve(Eigen::MatrixXd::Identity(d, d));
  return 0.5 * (lambda + lambda.transpose());
}

StudentTTarget::StudentTTarget(Eigen::MatrixXd precision, double nu)
    : precision_(std::move(precision)), nu_(nu) {
  validate_precision(precision_, "StudentTTarget");
  Eigen::LLT<Eigen::MatrixXd> llt(precision_);
  if (llt.info() != Eigen::Success) {
    throw ArgumentError("StudentTTarget: precision must be positive definite");
  }
  if (!(nu_ > 0.0)) {
    throw ArgumentError("StudentTTarget: degrees of freedom must be positive");
  }
}

double StudentTTarget::potential(const Eigen::VectorXd& q) const {
  check_dim(q, "StudentTTarget::potential");
  const double quad = q.dot(precision_ * q);
  return 0.5 * (nu_ + static_cast<double>(dim())) * std::log1p(quad / nu_);
}

Eigen::VectorXd StudentTTarget::gradient(const Eigen::VectorXd& q) const {
  check_dim(q, "StudentTTarget::gradient");
  const Eigen::VectorXd aq = precision_ * q;
  const double quad = q.dot(aq);
  return (nu_ + static_cast<double>(dim())) / (quad + nu_) * aq;
}

double StudentTTarget::hessian_quadratic_form(const Eigen::VectorXd& q,
                                              const Eigen::VectorXd& u) const {
  check_dim(q, "StudentTTarget::hessian_quadratic_form");
  check_dim(u, "StudentTTarget::hessian_quadratic_form");
  const Eigen::VectorXd aq = precision_ * q;
  const double quad = q.dot(aq);
  const double uau = u.dot(precision_ * u);
  const double uaq = u.dot(aq);
  const double denom = quad + nu_;
  return (nu_ + static_cast<double>(dim())) * (uau * denom - 2.0 * uaq * uaq) / (denom * denom);
}

}  // namespace hmcgeo
