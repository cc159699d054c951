#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <array>
#include <mutex>
#include <vector>

#include "hmcgeo/hmc.hpp"
#include "hmcgeo/image.hpp"
#include "hmcgeo/rng.hpp"
#include "hmcgeo/targets.hpp"

namespace hmcgeo {

// Uniform cubic B-spline basis at fractional offset u in [0, 1).
// Throws ArgumentError outside that interval.
std::array<double, 4> bspline_basis(double u);

// Free-form deformation on a control grid of ncx x ncy points with knot
// spacings sx, sy (pixels). Weights stack the x-displacement plane before
// the y-displacement plane, each plane vectorized row-major over (i, j)
// with plane index i*ncy + j.
//
// The grid carries a one-control-point ghost border on the low side, so the
// four control points supporting a point x use storage columns
// floor(x/sx) .. floor(x/sx)+3. The supported domain is therefore
// [0, (ncx-3)*sx) x [0, (ncy-3)*sy).
struct SplineField {
  Eigen::Index ncx = 0;
  Eigen::Index ncy = 0;
  double sx = 1.0;
  double sy = 1.0;
  Eigen::VectorXd weights;

  Eigen::Index points_per_plane() const { return ncx * ncy; }
  Eigen::Index dim() const { return 2 * ncx * ncy; }
  double support_x() const { return static_cast<double>(ncx - 3) * sx; }
  double support_y() const { return static_cast<double>(ncy - 3) * sy; }

  static SplineField zeros(Eigen::Index ncx, Eigen::Index ncy, double sx, double sy);

  // Smallest zero field whose support covers the pixel grid of a
  // width x height image: ceil(extent/spacing) interior cells plus the
  // three control points the cubic window needs beyond them.
  static SplineField fit_to_image(Eigen::Index width, Eigen::Index height,
                                  double sx, double sy);

  // Throws ArgumentError unless both grid dimensions are >= 4 (the cubic
  // window spans four control points), spacings >= 1 pixel, and the weight
  // vector has length 2*ncx*ncy with finite entries.
  void validate() const;
};

// Global affine transform applied before the spline displacement; treated
// as known and fixed. Maps pixel (x, y) to the first two entries of
// m * (x, y, 1).
struct AffinePre {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();

  static AffinePre identity() { return {}; }
  static AffinePre translation(double tx, double ty);

  Eigen::Vector2d apply(double x, double y) const {
    return {m(0, 0) * x + m(0, 1) * y + m(0, 2),
            m(1, 0) * x + m(1, 1) * y + m(1, 2)};
  }

  // Throws ArgumentError unless the matrix is finite with last row (0, 0, 1).
  void validate() const;
};

// Spline displacement (phi_x, phi_y) at (x, y). Throws BoundaryError when
// the point leaves the supported domain.
Eigen::Vector2d deform(const SplineField& field, double x, double y);

struct WarpResult {
  // Same grid dimensions as the moving image's pixel grid, which doubles as
  // the fixed grid everywhere in this module.
  ImageGrid image;
  // valid[i] = 1 when the warped sample for pixel i landed inside the moving
  // image; masked pixels hold intensity 0.
  std::vector<unsigned char> valid;
};

// Resamples M at (x', y') = A(x, y) + deform(field, x, y) for every pixel of
// M's grid. Out-of-bounds samples are masked, not errors; points outside the
// field's support still throw BoundaryError.
WarpResult warp(const ImageGrid& m, const AffinePre& a, const SplineField& field);

struct ResidualJacobian {
  // r[i] = M(x'_i, y'_i) - F(x_i, y_i) over F's pixel grid; masked samples
  // contribute r[i] = -F(x_i, y_i).
  Eigen::VectorXd r;
  // dr/dq with at most 32 nonzeros per row: the 16 supporting control
  // points of pixel i weighted by the image x-gradient in the x-plane block
  // and by the y-gradient in the y-plane block. Rows of masked pixels are
  // zero (the sample is constant there).
  Eigen::SparseMatrix<double, Eigen::RowMajor> jac;
};

ResidualJacobian residual_and_jacobian(const ImageGrid& f, const ImageGrid& m,
                                       const AffinePre& a, const SplineField& field);

// Membrane-energy precision for one displacement plane on an ncx x ncy
// control grid: D_h' D_h + D_v' D_v with forward differences along each grid
// direction and no wrap-around (differences are dropped at the far edges).
// Symmetric PSD; nullspace is exactly the constant vector. Throws
// ArgumentError when the grid has fewer than two points.
Eigen::MatrixXd membrane_precision_plane(Eigen::Index ncx, Eigen::Index ncy);

// Block diagonal of the plane precision over the x and y displacement
// planes; nullspace is exactly the two per-plane constants.
Eigen::MatrixXd membrane_precision(Eigen::Index ncx, Eigen::Index ncy);

// Posterior potential for intensity-based registration:
//   V(q) = phi/2 * ||r(q)||^2 + lambda/2 * q' Lambda q
// with r from residual_and_jacobian and Lambda the membrane precision of the
// field's control grid. gradient() returns the exact phi*J'r + lambda*Lambda*q;
// hessian_quadratic_form() uses the Gauss-Newton curvature
// phi*J'J + lambda*Lambda, the same surrogate the optimizer and the curvature
// diagnostics consume (the neglected phi*sum_i r_i Hess M term is the usual
// Gauss-Newton drop and keeps the form positive semidefinite).
//
// Evaluations at one q share a cached residual/gradient assembly; the dense
// Gauss-Newton matrix is materialized lazily on the first quadratic-form call
// at that q. The cache is mutex-guarded, so concurrent callers are safe but
// serialized.
class RegistrationTarget : public TargetModel {
 public:
  // field_shape supplies the control grid and spacings; its weights are
  // ignored (q is passed per call). Throws ArgumentError when the field does
  // not cover the fixed image's pixel grid, or phi/lambda are not positive
  // finite.
  RegistrationTarget(ImageGrid fixed, ImageGrid moving, AffinePre affine,
                     SplineField field_shape, double phi, double lambda);

  Eigen::Index dim() const override { return field_dim_; }
  double potential(const Eigen::VectorXd& q) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& q) const override;
  double hessian_quadratic_form(const Eigen::VectorXd& q,
                                const Eigen::VectorXd& u) const override;

  // Sum of squared residuals at q.
  double ssd(const Eigen::VectorXd& q) const;
  // Dense Gauss-Newton matrix phi*J'J + lambda*Lambda at q (no ridge).
  Eigen::MatrixXd dense_hessian(const Eigen::VectorXd& q) const;

  const ImageGrid& fixed() const { return fixed_; }
  const ImageGrid& moving() const { return moving_; }
  const AffinePre& affine() const { return affine_; }
  const Eigen::MatrixXd& prior_precision() const { return prior_; }
  double phi() const { return phi_; }
  double lambda() const { return lambda_; }

  // The target's field shape carrying the given weights.
  SplineField field_with(const Eigen::VectorXd& q) const;

 private:
  struct Cache {
    Eigen::VectorXd q;
    bool valid = false;
    Eigen::VectorXd r;
    // Image gradient at each pixel's warped point, zero when masked.
    Eigen::VectorXd gx, gy;
    bool have_grad = false;
    Eigen::VectorXd grad;
    bool have_dense = false;
    Eigen::MatrixXd dense;
  };

  // Refreshes the cache for q if needed. Caller holds mu_.
  void ensure_residual(const Eigen::VectorXd& q) const;
  void ensure_dense(const Eigen::VectorXd& q) const;

  ImageGrid fixed_;
  ImageGrid moving_;
  AffinePre affine_;
  Eigen::Index ncx_, ncy_;
  double sx_, sy_;
  Eigen::Index field_dim_;
  double phi_, lambda_;
  Eigen::MatrixXd prior_;

  // Per-pixel spline structure, fixed by the grids: the 16 supporting
  // control columns, their tensor basis weights, and the affine image of
  // the pixel. Layout is pixel-major, 16 entries per pixel.
  std::vector<Eigen::Index> support_cols_;
  std::vector<double> support_wgts_;
  Eigen::VectorXd affine_x_, affine_y_;

  mutable std::mutex mu_;
  mutable Cache cache_;
};

// One Gauss-Newton iterate: the weights, the data misfit, and the mean
// sectional curvature of the posterior's Jacobi geometry at the iterate
// (energy level drawn as V(q) + ||p||^2/2 with fresh standard-normal
// momentum, averaged over curvature_frames random tangent 2-frames).
struct GaussNewtonRecord {
  Eigen::VectorXd q;
  double ssd = 0.0;
  double mean_curvature = 0.0;
};

struct GaussNewtonTrace {
  // records[k] describes iterate k; records[0] is the starting point, so a
  // run of `iters` updates yields iters+1 records.
  std::vector<GaussNewtonRecord> records;
  // The field carrying the final weights.
  SplineField field;
};

// Gauss-Newton minimization of the registration potential:
//   q <- q - (phi*J'J + lambda*Lambda + ridge)^{-1} (phi*J'r + lambda*Lambda*q)
// with ridge 1e-10*I. curvature_frames = 0 selects dim(q) frames per iterate.
// Throws SolverError when the ridged system cannot be factorized and
// ArgumentError for nonpositive phi/lambda or negative iters.
GaussNewtonTrace gauss_newton_register(const ImageGrid& f, const ImageGrid& m,
                                       const AffinePre& a, const SplineField& field0,
                                       double phi, double lambda, long iters, Rng& rng,
                                       long curvature_frames = 0);

// Samples the registration posterior by delegating to run_chain; q0 is the
// warm start (prior mode 0 or a Gauss-Newton solution). The posterior-mean
// deformation is chain.posterior_mean, viewable as a field via
// target.field_with().
ChainResult sample_registration_posterior(const RegistrationTarget& target,
                                          const Eigen::VectorXd& q0,
                                          const HmcConfig& cfg);

}  // namespace hmcgeo
