#include "hmcgeo/registration.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Sparse>
#include <cmath>
#include <cstdio>
#include <utility>

#include "hmcgeo/errors.hpp"
#include "hmcgeo/geometry.hpp"

namespace hmcgeo {

namespace {

constexpr double kGaussNewtonRidge = 1e-10;

// Storage column of the lowest supporting control point for coordinate x:
// the paper-style index floor(x/s)-1 shifted by the one-point ghost border.
Eigen::Index support_base(double x, double s) {
  return static_cast<Eigen::Index>(std::floor(x / s));
}

std::string point_message(const char* what, double x, double y) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s at point (%.17g, %.17g)", what, x, y);
  return buf;
}

}  // namespace

std::array<double, 4> bspline_basis(double u) {
  if (!(u >= 0.0 && u < 1.0)) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "spline offset must lie in [0, 1), got %.17g", u);
    throw ArgumentError(buf);
  }
  double u2 = u * u;
  double u3 = u2 * u;
  double omu = 1.0 - u;
  return {omu * omu * omu / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
          (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0, u3 / 6.0};
}

SplineField SplineField::zeros(Eigen::Index ncx, Eigen::Index ncy, double sx,
                               double sy) {
  SplineField field;
  field.ncx = ncx;
  field.ncy = ncy;
  field.sx = sx;
  field.sy = sy;
  field.weights = Eigen::VectorXd::Zero(2 * ncx * ncy);
  field.validate();
  return field;
}

SplineField SplineField::fit_to_image(Eigen::Index width, Eigen::Index height,
                                      double sx, double sy) {
  if (width <= 0 || height <= 0) {
    throw ArgumentError("fit_to_image: image dimensions must be positive");
  }
  if (!(sx >= 1.0) || !(sy >= 1.0)) {
    throw ArgumentError("fit_to_image: spacings must be >= 1 pixel");
  }
  auto cells = [](Eigen::Index extent, double s) {
    return static_cast<Eigen::Index>(std::ceil(static_cast<double>(extent) / s));
  };
  return zeros(cells(width, sx) + 3, cells(height, sy) + 3, sx, sy);
}

void SplineField::validate() const {
  if (ncx < 4 || ncy < 4) {
    throw ArgumentError("spline field: control grid must be at least 4 x 4");
  }
  if (!(sx >= 1.0) || !(sy >= 1.0)) {
    throw ArgumentError("spline field: spacings must be >= 1 pixel");
  }
  if (weights.size() != dim()) {
    throw ArgumentError("spline field: weights length must equal 2*ncx*ncy");
  }
  if (!weights.allFinite()) {
    throw ArgumentError("spline field: weights must be finite");
  }
}

AffinePre AffinePre::translation(double tx, double ty) {
  AffinePre a;
  a.m(0, 2) = tx;
  a.m(1, 2) = ty;
  return a;
}

void AffinePre::validate() const {
  if (!m.allFinite()) {
    throw ArgumentError("affine matrix must be finite");
  }
  if (m(2, 0) != 0.0 || m(2, 1) != 0.0 || m(2, 2) != 1.0) {
    throw ArgumentError("affine matrix last row must be (0, 0, 1)");
  }
}

Eigen::Vector2d deform(const SplineField& field, double x, double y) {
  if (!std::isfinite(x) || !std::isfinite(y)) {
    throw BoundaryError(point_message("deformation evaluated", x, y));
  }
  Eigen::Index ix = support_base(x, field.sx);
  Eigen::Index iy = support_base(y, field.sy);
  if (ix < 0 || ix + 3 > field.ncx - 1 || iy < 0 || iy + 3 > field.ncy - 1) {
    throw BoundaryError(point_message("point outside spline field support", x, y));
  }
  double u = x / field.sx - std::floor(x / field.sx);
  double v = y / field.sy - std::floor(y / field.sy);
  std::array<double, 4> bu = bspline_basis(u);
  std::array<double, 4> bv = bspline_basis(v);

  Eigen::Index n = field.points_per_plane();
  double phix = 0.0;
  double phiy = 0.0;
  for (int l = 0; l < 4; ++l) {
    for (int m = 0; m < 4; ++m) {
      Eigen::Index col = (ix + l) * field.ncy + (iy + m);
      double wgt = bu[l] * bv[m];
      phix += wgt * field.weights[col];
      phiy += wgt * field.weights[n + col];
    }
  }
  return {phix, phiy};
}

WarpResult warp(const ImageGrid& m, const AffinePre& a, const SplineField& field) {
  m.validate();
  a.validate();
  field.validate();

  WarpResult out;
  out.image.width = m.width;
  out.image.height = m.height;
  out.image.intensities.resize(m.width * m.height);
  out.valid.assign(static_cast<std::size_t>(m.width * m.height), 0);
  for (Eigen::Index yy = 0; yy < m.height; ++yy) {
    for (Eigen::Index xx = 0; xx < m.width; ++xx) {
      Eigen::Index i = yy * m.width + xx;
      double x = static_cast<double>(xx);
      double y = static_cast<double>(yy);
      Eigen::Vector2d phi = deform(field, x, y);
      Eigen::Vector2d pre = a.apply(x, y);
      BilinearSample s = sample_bilinear(m, pre.x() + phi.x(), pre.y() + phi.y());
      out.image.intensities[i] = s.value;
      out.valid[static_cast<std::size_t>(i)] = s.in_bounds ? 1 : 0;
    }
  }
  return out;
}

ResidualJacobian residual_and_jacobian(const ImageGrid& f, const ImageGrid& m,
                                       const AffinePre& a, const SplineField& field) {
  f.validate();
  m.validate();
  a.validate();
  field.validate();

  Eigen::Index npix = f.width * f.height;
  Eigen::Index n = field.points_per_plane();
  ResidualJacobian out;
  out.r.resize(npix);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(npix) * 32);

  for (Eigen::Index yy = 0; yy < f.height; ++yy) {
    for (Eigen::Index xx = 0; xx < f.width; ++xx) {
      Eigen::Index i = yy * f.width + xx;
      double x = static_cast<double>(xx);
      double y = static_cast<double>(yy);
      Eigen::Vector2d phi = deform(field, x, y);
      Eigen::Vector2d pre = a.apply(x, y);
      double xp = pre.x() + phi.x();
      double yp = pre.y() + phi.y();
      BilinearSample s = sample_bilinear(m, xp, yp);
      out.r[i] = s.value - f.at(xx, yy);
      if (!s.in_bounds) continue;

      Eigen::Vector2d grad = sample_gradient(m, xp, yp);
      Eigen::Index ix = support_base(x, field.sx);
      Eigen::Index iy = support_base(y, field.sy);
      std::array<double, 4> bu = bspline_basis(x / field.sx - std::floor(x / field.sx));
      std::array<double, 4> bv = bspline_basis(y / field.sy - std::floor(y / field.sy));
      for (int l = 0; l < 4; ++l) {
        for (int mm = 0; mm < 4; ++mm) {
          Eigen::Index col = (ix + l) * field.ncy + (iy + mm);
          double wgt = bu[l] * bv[mm];
          triplets.emplace_back(i, col, grad.x() * wgt);
          triplets.emplace_back(i, n + col, grad.y() * wgt);
        }
      }
    }
  }
  out.jac.resize(npix, field.dim());
  out.jac.setFromTriplets(triplets.begin(), triplets.end());
  return out;
}

Eigen::MatrixXd membrane_precision_plane(Eigen::Index ncx, Eigen::Index ncy) {
  if (ncx < 1 || ncy < 1 || ncx * ncy < 2) {
    throw ArgumentError("membrane precision: control grid needs at least two points");
  }
  Eigen::Index n = ncx * ncy;
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  auto add_difference = [&k](Eigen::Index a, Eigen::Index b) {
    k(a, a) += 1.0;
    k(b, b) += 1.0;
    k(a, b) -= 1.0;
    k(b, a) -= 1.0;
  };
  for (Eigen::Index i = 0; i < ncx; ++i) {
    for (Eigen::Index j = 0; j < ncy; ++j) {
      if (i + 1 < ncx) add_difference(i * ncy + j, (i + 1) * ncy + j);
      if (j + 1 < ncy) add_difference(i * ncy + j, i * ncy + j + 1);
    }
  }
  return k;
}

Eigen::MatrixXd membrane_precision(Eigen::Index ncx, Eigen::Index ncy) {
  Eigen::MatrixXd plane = membrane_precision_plane(ncx, ncy);
  Eigen::Index n = plane.rows();
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  full.topLeftCorner(n, n) = plane;
  full.bottomRightCorner(n, n) = plane;
  return full;
}

RegistrationTarget::RegistrationTarget(ImageGrid fixed, ImageGrid moving,
                                       AffinePre affine, SplineField field_shape,
                                       double phi, double lambda)
    : fixed_(std::move(fixed)),
      moving_(std::move(moving)),
      affine_(std::move(affine)),
      ncx_(field_shape.ncx),
      ncy_(field_shape.ncy),
      sx_(field_shape.sx),
      sy_(field_shape.sy),
      field_dim_(field_shape.dim()),
      phi_(phi),
      lambda_(lambda) {
  fixed_.validate();
  moving_.validate();
  affine_.validate();
  field_shape.validate();
  if (!(phi_ > 0.0) || !std::isfinite(phi_)) {
    throw ArgumentError("registration target: phi must be positive and finite");
  }
  if (!(lambda_ > 0.0) || !std::isfinite(lambda_)) {
    throw ArgumentError("registration target: lambda must be positive and finite");
  }
  if (support_base(static_cast<double>(fixed_.width - 1), sx_) + 3 > ncx_ - 1 ||
      support_base(static_cast<double>(fixed_.height - 1), sy_) + 3 > ncy_ - 1) {
    throw ArgumentError(
        "registration target: field support does not cover the fixed image grid");
  }

  prior_ = membrane_precision(ncx_, ncy_);

  Eigen::Index npix = fixed_.width * fixed_.height;
  support_cols_.resize(static_cast<std::size_t>(npix) * 16);
  support_wgts_.resize(static_cast<std::size_t>(npix) * 16);
  affine_x_.resize(npix);
  affine_y_.resize(npix);
  for (Eigen::Index yy = 0; yy < fixed_.height; ++yy) {
    for (Eigen::Index xx = 0; xx < fixed_.width; ++xx) {
      Eigen::Index i = yy * fixed_.width + xx;
      double x = static_cast<double>(xx);
      double y = static_cast<double>(yy);
      Eigen::Vector2d pre = affine_.apply(x, y);
      affine_x_[i] = pre.x();
      affine_y_[i] = pre.y();
      Eigen::Index ix = support_base(x, sx_);
      Eigen::Index iy = support_base(y, sy_);
      std::array<double, 4> bu = bspline_basis(x / sx_ - std::floor(x / sx_));
      std::array<double, 4> bv = bspline_basis(y / sy_ - std::floor(y / sy_));
      std::size_t base = static_cast<std::size_t>(i) * 16;
      for (int l = 0; l < 4; ++l) {
        for (int mm = 0; mm < 4; ++mm) {
          support_cols_[base + static_cast<std::size_t>(l * 4 + mm)] =
              (ix + l) * ncy_ + (iy + mm);
          support_wgts_[base + static_cast<std::size_t>(l * 4 + mm)] = bu[l] * bv[mm];
        }
      }
    }
  }
}

void RegistrationTarget::ensure_residual(const Eigen::VectorXd& q) const {
  if (cache_.valid && cache_.q.size() == q.size() &&
      (cache_.q.array() == q.array()).all()) {
    return;
  }
  Eigen::Index npix = fixed_.width * fixed_.height;
  Eigen::Index n = ncx_ * ncy_;
  cache_.r.resize(npix);
  cache_.gx.resize(npix);
  cache_.gy.resize(npix);
  for (Eigen::Index i = 0; i < npix; ++i) {
    std::size_t base = static_cast<std::size_t>(i) * 16;
    double phix = 0.0;
    double phiy = 0.0;
    for (std::size_t k = 0; k < 16; ++k) {
      Eigen::Index col = support_cols_[base + k];
      double wgt = support_wgts_[base + k];
      phix += wgt * q[col];
      phiy += wgt * q[n + col];
    }
    double xp = affine_x_[i] + phix;
    double yp = affine_y_[i] + phiy;
    BilinearSample s = sample_bilinear(moving_, xp, yp);
    cache_.r[i] = s.value - fixed_.intensities[i];
    if (s.in_bounds) {
      Eigen::Vector2d grad = sample_gradient(moving_, xp, yp);
      cache_.gx[i] = grad.x();
      cache_.gy[i] = grad.y();
    } else {
      cache_.gx[i] = 0.0;
      cache_.gy[i] = 0.0;
    }
  }
  cache_.q = q;
  cache_.valid = true;
  cache_.have_grad = false;
  cache_.have_dense = false;
}

void RegistrationTarget::ensure_dense(const Eigen::VectorXd& q) const {
  ensure_residual(q);
  if (cache_.have_dense) return;
  Eigen::Index npix = fixed_.width * fixed_.height;
  Eigen::Index n = ncx_ * ncy_;
  cache_.dense = lambda_ * prior_;
  Eigen::Index cols[32];
  double vals[32];
  for (Eigen::Index i = 0; i < npix; ++i) {
    double gx = cache_.gx[i];
    double gy = cache_.gy[i];
    if (gx == 0.0 && gy == 0.0) continue;
    std::size_t base = static_cast<std::size_t>(i) * 16;
    for (std::size_t k = 0; k < 16; ++k) {
      Eigen::Index col = support_cols_[base + k];
      double wgt = support_wgts_[base + k];
      cols[k] = col;
      vals[k] = gx * wgt;
      cols[16 + k] = n + col;
      vals[16 + k] = gy * wgt;
    }
    for (int a = 0; a < 32; ++a) {
      double va = phi_ * vals[a];
      Eigen::Index ca = cols[a];
      for (int b = 0; b <= a; ++b) {
        cache_.dense(ca, cols[b]) += va * vals[b];
      }
    }
  }
  cache_.dense.triangularView<Eigen::Upper>() = cache_.dense.transpose();
  cache_.have_dense = true;
}

double RegistrationTarget::potential(const Eigen::VectorXd& q) const {
  check_dim(q, "q");
  std::lock_guard<std::mutex> lock(mu_);
  ensure_residual(q);
  return 0.5 * phi_ * cache_.r.squaredNorm() + 0.5 * lambda_ * q.dot(prior_ * q);
}

Eigen::VectorXd RegistrationTarget::gradient(const Eigen::VectorXd& q) const {
  check_dim(q, "q");
  std::lock_guard<std::mutex> lock(mu_);
  ensure_residual(q);
  if (cache_.have_grad) return cache_.grad;
  Eigen::Index npix = fixed_.width * fixed_.height;
  Eigen::Index n = ncx_ * ncy_;
  Eigen::VectorXd g = lambda_ * (prior_ * q);
  for (Eigen::Index i = 0; i < npix; ++i) {
    double cx = phi_ * cache_.r[i] * cache_.gx[i];
    double cy = phi_ * cache_.r[i] * cache_.gy[i];
    if (cx == 0.0 && cy == 0.0) continue;
    std::size_t base = static_cast<std::size_t>(i) * 16;
    for (std::size_t k = 0; k < 16; ++k) {
      Eigen::Index col = support_cols_[base + k];
      double wgt = support_wgts_[base + k];
      g[col] += cx * wgt;
      g[n + col] += cy * wgt;
    }
  }
  cache_.grad = std::move(g);
  cache_.have_grad = true;
  return cache_.grad;
}

double RegistrationTarget::hessian_quadratic_form(const Eigen::VectorXd& q,
                                                  const Eigen::VectorXd& u) const {
  check_dim(q, "q");
  check_dim(u, "u");
  std::lock_guard<std::mutex> lock(mu_);
  ensure_dense(q);
  return u.dot(cache_.dense * u);
}

double RegistrationTarget::ssd(const Eigen::VectorXd& q) const {
  check_dim(q, "q");
  std::lock_guard<std::mutex> lock(mu_);
  ensure_residual(q);
  return cache_.r.squaredNorm();
}

Eigen::MatrixXd RegistrationTarget::dense_hessian(const Eigen::VectorXd& q) const {
  check_dim(q, "q");
  std::lock_guard<std::mutex> lock(mu_);
  ensure_dense(q);
  return cache_.dense;
}

SplineField RegistrationTarget::field_with(const Eigen::VectorXd& q) const {
  check_dim(q, "q");
  SplineField field;
  field.ncx = ncx_;
  field.ncy = ncy_;
  field.sx = sx_;
  field.sy = sy_;
  field.weights = q;
  field.validate();
  return field;
}

GaussNewtonTrace gauss_newton_register(const ImageGrid& f, const ImageGrid& m,
                                       const AffinePre& a, const SplineField& field0,
                                       double phi, double lambda, long iters, Rng& rng,
                                       long curvature_frames) {
  if (iters < 0) {
    throw ArgumentError("gauss_newton_register: iters must be >= 0");
  }
  if (curvature_frames < 0) {
    throw ArgumentError("gauss_newton_register: curvature_frames must be >= 0");
  }
  field0.validate();
  RegistrationTarget target(f, m, a, field0, phi, lambda);
  Eigen::Index d = target.dim();
  long frames = curvature_frames > 0 ? curvature_frames : static_cast<long>(d);

  GaussNewtonTrace trace;
  trace.records.reserve(static_cast<std::size_t>(iters) + 1);
  Eigen::VectorXd q = field0.weights;
  for (long k = 0; k <= iters; ++k) {
    GaussNewtonRecord rec;
    rec.q = q;
    rec.ssd = target.ssd(q);
    double v = target.potential(q);
    double sec_sum = 0.0;
    for (long fr = 0; fr < frames; ++fr) {
      double h = v + 0.5 * rng.normal_vector(d).squaredNorm();
      Frame2 frame = sample_frame2(d, rng);
      sec_sum += sectional_curvature(target, q, h, frame);
    }
    rec.mean_curvature = sec_sum / static_cast<double>(frames);
    trace.records.push_back(std::move(rec));

    if (k == iters) break;
    Eigen::MatrixXd h = target.dense_hessian(q);
    h.diagonal().array() += kGaussNewtonRidge;
    Eigen::VectorXd g = target.gradient(q);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success) {
      throw SolverError("gauss_newton_register: normal equations factorization failed");
    }
    Eigen::VectorXd step = ldlt.solve(g);
    if (!step.allFinite()) {
      throw SolverError("gauss_newton_register: normal equations produced "
                        "non-finite step");
    }
    q -= step;
  }
  trace.field = target.field_with(q);
  return trace;
}

ChainResult sample_registration_posterior(const RegistrationTarget& target,
                                          const Eigen::VectorXd& q0,
                                          const HmcConfig& cfg) {
  if (q0.size() != target.dim()) {
    throw ArgumentError("sample_registration_posterior: q0 length must match the "
                        "field dimension");
  }
  return run_chain(target, q0, cfg);
}

}  // namespace hmcgeo
