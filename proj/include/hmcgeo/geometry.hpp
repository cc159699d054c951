#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hmcgeo/hmc.hpp"
#include "hmcgeo/rng.hpp"
#include "hmcgeo/targets.hpp"

namespace hmcgeo {

// Orthonormal 2-frame of tangent vectors.
struct Frame2 {
  Eigen::VectorXd u;
  Eigen::VectorXd v;

  bool is_orthonormal(double tol = 1e-10) const;
};

// Uniform draw from the Stiefel manifold of orthonormal 2-frames: a d x 2
// matrix of i.i.d. standard normals (column by column) orthonormalized by QR
// with the positive-diagonal-R sign convention. Rank-deficient draws are
// redrawn.
Frame2 sample_frame2(Eigen::Index d, Rng& rng);

// Sectional curvature of the energy-h Jacobi metric at q in the plane spanned
// by the frame:
//   (2(h-V)(u'Hu + v'Hv) + 3(g.u)^2 + 3(g.v)^2 - |g|^2) / (8 (h-V)^3)
// with V, g, H the potential, gradient and Hessian at q. When |g| < 1e-14 the
// projection terms are set to zero. Throws DegenerateMetricError when
// h - V(q) <= 1e-12 and ArgumentError for a non-orthonormal frame.
double sectional_curvature(const TargetModel& model, const Eigen::VectorXd& q, double h,
                           const Frame2& frame);

// Length scaling factor of the energy-h Jacobi metric where the potential is
// V: sqrt(2(h-V)). Equals |p| when h = V + |p|^2/2. Throws
// DegenerateMetricError when h < V.
double jacobi_speed(double h, double V);

struct ScanOptions {
  // Evaluate at the post-step position instead of the trajectory start.
  bool at_trajectory_end = false;
  int histogram_bins = 50;
  int threads = 1;
};

// Curvature samples along a chain, with summaries both raw and under the
// d^2 Sec normalization.
struct CurvatureScan {
  // Row r holds the frames_per_step samples for chain step step_of_row[r];
  // steps whose metric was degenerate are skipped and counted instead.
  Eigen::MatrixXd samples;
  std::vector<long> step_of_row;
  long skipped_steps = 0;
  long frames_per_step = 0;
  Eigen::Index dim = 0;

  double min = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  double dim_sq_min = 0.0;
  double dim_sq_mean = 0.0;
  double dim_sq_stddev = 0.0;

  Eigen::VectorXd per_step_min;
  Eigen::VectorXd per_step_mean;

  // Uniform bins spanning [min, max]; counts sum to the recorded samples.
  Eigen::VectorXd histogram_edges;
  std::vector<long> histogram_counts;
};

// Evaluates sectional curvature at `frames_per_step` fresh frames for every
// chain step, at the step's start position (or end with at_trajectory_end)
// and the step's recorded trajectory energy. The chain must store every
// state (thin == 1). Steps are distributed over opts.threads workers with
// per-step RNG substreams; results do not depend on the thread count.
CurvatureScan curvature_scan(const TargetModel& model, const ChainResult& chain,
                             long frames_per_step, Rng& rng, const ScanOptions& opts = {});

}  // namespace hmcgeo
