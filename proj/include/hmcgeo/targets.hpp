#pragma once

#include <Eigen/Dense>

#include "hmcgeo/rng.hpp"

namespace hmcgeo {

// A target distribution seen through its potential V(q) = -log pi(q) + const.
// Normalizing constants are never needed: the sampler and the curvature
// machinery consume only potential differences and derivatives.
class TargetModel {
 public:
  virtual ~TargetModel() = default;

  virtual Eigen::Index dim() const = 0;
  virtual double potential(const Eigen::VectorXd& q) const = 0;
  virtual Eigen::VectorXd gradient(const Eigen::VectorXd& q) const = 0;

  // u' Hess V(q) u without materializing the Hessian.
  virtual double hessian_quadratic_form(const Eigen::VectorXd& q,
                                        const Eigen::VectorXd& u) const = 0;

 protected:
  // Throws ArgumentError on dimension mismatch.
  void check_dim(const Eigen::VectorXd& x, const char* what) const;
};

// Centered Gaussian with precision matrix Lambda:
//   V(q) = q' Lambda q / 2,  grad V = Lambda q,  Hess V = Lambda.
// The constructor validates symmetry (within 1e-12) and positive
// definiteness via a spectral factorization, which is cached and reused by
// the closed-form Hamiltonian flow.
class GaussianTarget : public TargetModel {
 public:
  explicit GaussianTarget(Eigen::MatrixXd precision);

  Eigen::Index dim() const override { return precision_.rows(); }
  double potential(const Eigen::VectorXd& q) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& q) const override;
  double hessian_quadratic_form(const Eigen::VectorXd& q,
                                const Eigen::VectorXd& u) const override;

  const Eigen::MatrixXd& precision() const { return precision_; }
  double precision_trace() const { return precision_.trace(); }

  // Spectral factorization Lambda = U diag(mu) U'.
  const Eigen::VectorXd& precision_eigenvalues() const { return eigenvalues_; }
  const Eigen::MatrixXd& precision_eigenvectors() const { return eigenvectors_; }

  // Draw q ~ N(0, Lambda^{-1}).
  Eigen::VectorXd sample_position(Rng& rng) const;

  // Precision builders for the structured specs accepted in model configs.
  static Eigen::MatrixXd identity_precision(Eigen::Index d);
  // Covariance Sigma_ij = exp(-|i-j|^2); the precision is its inverse,
  // computed by a Cholesky solve and symmetrized.
  static Eigen::MatrixXd exp_sq_decay_covariance(Eigen::Index d);
  static Eigen::MatrixXd exp_sq_decay_precision(Eigen::Index d);

 private:
  Eigen::MatrixXd precision_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
};

// Multivariate t with degrees of freedom nu and precision A = Sigma^{-1}:
//   V(q) = (nu + d)/2 * log(1 + Q(q)/nu),  Q(q) = q' A q.
// Gradient and Hessian quadratic form follow by direct differentiation:
//   grad V = (nu + d) A q / (Q + nu)
//   u' Hess V u = (nu + d) [u'Au (Q + nu) - 2 (u'Aq)^2] / (Q + nu)^2.
// As nu -> infinity these converge to the Gaussian expressions.
class StudentTTarget : public TargetModel {
 public:
  StudentTTarget(Eigen::MatrixXd precision, double nu);

  Eigen::Index dim() const override { return precision_.rows(); }
  double potential(const Eigen::VectorXd& q) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& q) const override;
  double hessian_quadratic_form(const Eigen::VectorXd& q,
                                const Eigen::VectorXd& u) const override;

  double nu() const { return nu_; }
  const Eigen::MatrixXd& precision() const { return precision_; }

 private:
  Eigen::MatrixXd precision_;
  double nu_;
};

}  // namespace hmcgeo
