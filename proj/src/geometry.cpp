#include "hmcgeo/geometry.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "hmcgeo/errors.hpp"

namespace hmcgeo {

namespace {

constexpr double kMetricTol = 1e-12;
constexpr double kGradientFloor = 1e-14;

// Core formula given precomputed ingredients; a = h - V > 0.
double curvature_from_parts(double a, double uhu, double vhv, double gu, double gv,
                            double g_sq) {
  const double numerator = 2.0 * a * (uhu + vhv) + 3.0 * gu * gu + 3.0 * gv * gv - g_sq;
  return numerator / (8.0 * a * a * a);
}

}  // namespace

bool Frame2::is_orthonormal(double tol) const {
  if (u.size() != v.size() || u.size() == 0) return false;
  return std::abs(u.norm() - 1.0) <= tol && std::abs(v.norm() - 1.0) <= tol &&
         std::abs(u.dot(v)) <= tol;
}

Frame2 sample_frame2(Eigen::Index d, Rng& rng) {
  if (d < 2) throw ArgumentError("sample_frame2: dimension must be at least 2");
  for (int attempt = 0; attempt < 64; ++attempt) {
    Eigen::MatrixXd m(d, 2);
    m.col(0) = rng.normal_vector(d);
    m.col(1) = rng.normal_vector(d);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, 2);
    const Eigen::Matrix2d r =
        qr.matrixQR().topRows(2).triangularView<Eigen::Upper>();
    if (std::abs(r(0, 0)) < 1e-12 || std::abs(r(1, 1)) < 1e-12) continue;  // redraw
    if (r(0, 0) < 0.0) q.col(0) = -q.col(0);
    if (r(1, 1) < 0.0) q.col(1) = -q.col(1);
    return Frame2{q.col(0), q.col(1)};
  }
  throw SolverError("sample_frame2: repeated rank-deficient draws");
}

double sectional_curvature(const TargetModel& model, const Eigen::VectorXd& q, double h,
                           const Frame2& frame) {
  if (!frame.is_orthonormal()) {
    throw ArgumentError("sectional_curvature: frame is not orthonormal");
  }
  const double a = h - model.potential(q);
  if (!(a > kMetricTol)) {
    throw DegenerateMetricError("sectional_curvature: energy does not exceed the potential");
  }
  const Eigen::VectorXd g = model.gradient(q);
  const double g_sq = g.squaredNorm();
  double gu = 0.0, gv = 0.0;
  if (g.norm() >= kGradientFloor) {
    gu = g.dot(frame.u);
    gv = g.dot(frame.v);
  }
  const double uhu = model.hessian_quadratic_form(q, frame.u);
  const double vhv = model.hessian_quadratic_form(q, frame.v);
  return curvature_from_parts(a, uhu, vhv, gu, gv, g_sq);
}

double jacobi_speed(double h, double V) {
  if (h < V) throw DegenerateMetricError("jacobi_speed: energy below the potential");
  return std::sqrt(2.0 * (h - V));
}

CurvatureScan curvature_scan(const TargetModel& model, const ChainResult& chain,
                             long frames_per_step, Rng& rng, const ScanOptions& opts) {
  if (frames_per_step < 1) {
    throw ArgumentError("curvature_scan: frames_per_step must be at least 1");
  }
  if (chain.thin != 1 || chain.samples.rows() != chain.chain_length) {
    throw ArgumentError("curvature_scan: chain must store every state (thin == 1)");
  }
  if (opts.histogram_bins < 1) {
    throw ArgumentError("curvature_scan: histogram needs at least one bin");
  }
  const Eigen::Index d = model.dim();
  const long steps = chain.chain_length;
  const std::uint64_t scan_seed = rng.engine()();

  // Per-step rows; degenerate steps leave their row unrecorded.
  Eigen::MatrixXd raw(steps, frames_per_step);
  std::vector<char> recorded(static_cast<std::size_t>(steps), 0);

  auto scan_step = [&](long s) {
    const Eigen::VectorXd q = opts.at_trajectory_end
                                  ? Eigen::VectorXd(chain.samples.row(s))
                                  : (s == 0 ? chain.q0 : Eigen::VectorXd(chain.samples.row(s - 1)));
    const double h = chain.energies[s];
    const double a = h - model.potential(q);
    if (!(a > kMetricTol)) return;
    const Eigen::VectorXd g = model.gradient(q);
    const double g_sq = g.squaredNorm();
    const bool use_g = g.norm() >= kGradientFloor;
    Rng sub = Rng::substream(scan_seed, static_cast<std::uint64_t>(s));
    for (long f = 0; f < frames_per_step; ++f) {
      const Frame2 frame = sample_frame2(d, sub);
      const double gu = use_g ? g.dot(frame.u) : 0.0;
      const double gv = use_g ? g.dot(frame.v) : 0.0;
      raw(s, f) = curvature_from_parts(a, model.hessian_quadratic_form(q, frame.u),
                                       model.hessian_quadratic_form(q, frame.v), gu, gv, g_sq);
    }
    recorded[static_cast<std::size_t>(s)] = 1;
  };

  const int workers = std::max(1, opts.threads);
  if (workers == 1) {
    for (long s = 0; s < steps; ++s) scan_step(s);
  } else {
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (long s = next.fetch_add(1); s < steps; s = next.fetch_add(1)) scan_step(s);
      });
    }
    for (auto& t : pool) t.join();
  }

  CurvatureScan scan;
  scan.frames_per_step = frames_per_step;
  scan.dim = d;
  long kept = 0;
  for (long s = 0; s < steps; ++s) kept += recorded[static_cast<std::size_t>(s)] ? 1 : 0;
  scan.skipped_steps = steps - kept;
  if (kept == 0) {
    throw DegenerateMetricError("curvature_scan: every chain step was degenerate");
  }

  scan.samples.resize(kept, frames_per_step);
  scan.step_of_row.reserve(static_cast<std::size_t>(kept));
  scan.per_step_min.resize(kept);
  scan.per_step_mean.resize(kept);
  long row = 0;
  for (long s = 0; s < steps; ++s) {
    if (!recorded[static_cast<std::size_t>(s)]) continue;
    scan.samples.row(row) = raw.row(s);
    scan.step_of_row.push_back(s);
    scan.per_step_min[row] = raw.row(s).minCoeff();
    scan.per_step_mean[row] = raw.row(s).mean();
    ++row;
  }

  const double n = static_cast<double>(kept) * static_cast<double>(frames_per_step);
  scan.min = scan.samples.minCoeff();
  scan.mean = scan.samples.mean();
  const double ss = (scan.samples.array() - scan.mean).square().sum();
  scan.stddev = n > 1.0 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  const double dsq = static_cast<double>(d) * static_cast<double>(d);
  scan.dim_sq_min = dsq * scan.min;
  scan.dim_sq_mean = dsq * scan.mean;
  scan.dim_sq_stddev = dsq * scan.stddev;

  const int bins = opts.histogram_bins;
  double lo = scan.min;
  double hi = scan.samples.maxCoeff();
  if (!(hi > lo)) {  // all samples identical
    lo -= 0.5;
    hi += 0.5;
  }
  scan.histogram_edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b) {
    scan.histogram_edges[b] = lo + (hi - lo) * static_cast<double>(b) / bins;
  }
  scan.histogram_counts.assign(static_cast<std::size_t>(bins), 0);
  const double width = (hi - lo) / bins;
  for (long r = 0; r < scan.samples.rows(); ++r) {
    for (long f = 0; f < frames_per_step; ++f) {
      auto b = static_cast<long>((scan.samples(r, f) - lo) / width);
      b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
      ++scan.histogram_counts[static_cast<std::size_t>(b)];
    }
  }
  return scan;
}

}  // namespace hmcgeo
