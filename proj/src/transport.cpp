#include "hmcgeo/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hmcgeo/errors.hpp"

namespace hmcgeo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using CostMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense Jonker-Volgenant solver for min-cost perfect assignment. Fills
// rowsol[i] with the column assigned to row i and returns the dual column
// prices used for the optimality certificate.
std::vector<double> lap_dense(const CostMatrix& cost, std::vector<long>& rowsol) {
  const long n = cost.rows();
  rowsol.assign(static_cast<std::size_t>(n), -1);
  std::vector<long> colsol(static_cast<std::size_t>(n), -1);
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  std::vector<long> matches(static_cast<std::size_t>(n), 0);
  std::vector<long> freelist(static_cast<std::size_t>(n), 0);

  // Column reduction.
  for (long j = n - 1; j >= 0; --j) {
    double min = cost(0, j);
    long imin = 0;
    for (long i = 1; i < n; ++i) {
      if (cost(i, j) < min) {
        min = cost(i, j);
        imin = i;
      }
    }
    v[j] = min;
    if (++matches[imin] == 1) {
      rowsol[imin] = j;
      colsol[j] = imin;
    }
  }

  // Reduction transfer from singly assigned rows.
  long numfree = 0;
  for (long i = 0; i < n; ++i) {
    if (matches[i] == 0) {
      freelist[numfree++] = i;
    } else if (matches[i] == 1) {
      const long j1 = rowsol[i];
      double min = kInf;
      for (long j = 0; j < n; ++j) {
        if (j != j1 && cost(i, j) - v[j] < min) min = cost(i, j) - v[j];
      }
      v[j1] -= min;
    }
  }

  // Augmenting row reduction, two passes.
  for (int loop = 0; loop < 2; ++loop) {
    long k = 0;
    const long prvnumfree = numfree;
    numfree = 0;
    while (k < prvnumfree) {
      const long i = freelist[k++];
      double umin = cost(i, 0) - v[0];
      long j1 = 0;
      double usubmin = kInf;
      long j2 = -1;
      for (long j = 1; j < n; ++j) {
        const double h = cost(i, j) - v[j];
        if (h < usubmin) {
          if (h >= umin) {
            usubmin = h;
            j2 = j;
          } else {
            usubmin = umin;
            j2 = j1;
            umin = h;
            j1 = j;
          }
        }
      }
      long i0 = colsol[j1];
      if (umin < usubmin) {
        v[j1] -= usubmin - umin;
      } else if (i0 >= 0) {
        j1 = j2;
        i0 = colsol[j1];
      }
      rowsol[i] = j1;
      colsol[j1] = i;
      if (i0 >= 0) {
        if (umin < usubmin) {
          freelist[--k] = i0;
        } else {
          freelist[numfree++] = i0;
        }
      }
    }
  }

  // Shortest augmenting paths for the remaining free rows.
  std::vector<double> d(static_cast<std::size_t>(n));
  std::vector<long> pred(static_cast<std::size_t>(n));
  std::vector<long> collist(static_cast<std::size_t>(n));
  for (long f = 0; f < numfree; ++f) {
    const long freerow = freelist[f];
    for (long j = 0; j < n; ++j) {
      d[j] = cost(freerow, j) - v[j];
      pred[j] = freerow;
      collist[j] = j;
    }
    long low = 0, up = 0, last = -1;
    long endofpath = -1;
    double min = 0.0;
    bool unassignedfound = false;
    do {
      if (up == low) {
        last = low - 1;
        min = d[collist[up++]];
        for (long k = up; k < n; ++k) {
          const long j = collist[k];
          const double h = d[j];
          if (h <= min) {
            if (h < min) {
              up = low;
              min = h;
            }
            collist[k] = collist[up];
            collist[up++] = j;
          }
        }
        for (long k = low; k < up; ++k) {
          if (colsol[collist[k]] < 0) {
            endofpath = collist[k];
            unassignedfound = true;
            break;
          }
        }
      }
      if (!unassignedfound) {
        const long j1 = collist[low++];
        const long i = colsol[j1];
        const double h = cost(i, j1) - v[j1] - min;
        for (long k = up; k < n; ++k) {
          const long j = collist[k];
          const double v2 = cost(i, j) - v[j] - h;
          if (v2 < d[j]) {
            pred[j] = i;
            if (v2 == min) {
              if (colsol[j] < 0) {
                endofpath = j;
                unassignedfound = true;
                break;
              }
              collist[k] = collist[up];
              collist[up++] = j;
            }
            d[j] = v2;
          }
        }
      }
    } while (!unassignedfound);

    for (long k = 0; k <= last; ++k) {
      const long j1 = collist[k];
      v[j1] += d[j1] - min;
    }

    long j = endofpath;
    long i;
    do {
      i = pred[j];
      colsol[j] = i;
      const long next = rowsol[i];
      rowsol[i] = j;
      j = next;
    } while (i != freerow);
  }
  return v;
}

// Weak-duality certificate: with u_i = c(i, s_i) - v_{s_i}, every reduced
// cost must be nonnegative up to rounding, which pins the assignment to the
// optimum within n * tol.
void certify_assignment(const CostMatrix& cost, const std::vector<long>& rowsol,
                        const std::vector<double>& v) {
  const long n = cost.rows();
  const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
  const double tol = 1e-9 * scale;
  for (long i = 0; i < n; ++i) {
    const double u = cost(i, rowsol[i]) - v[rowsol[i]];
    for (long j = 0; j < n; ++j) {
      if (cost(i, j) - u - v[j] < -tol) {
        throw SolverError("wasserstein1: assignment failed the duality certificate");
      }
    }
  }
}

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(Eigen::MatrixXd pts) : points(std::move(pts)) {
  if (points.rows() < 1) throw ArgumentError("EmpiricalMeasure: need at least one point");
  if (!points.allFinite()) throw ArgumentError("EmpiricalMeasure: coordinates must be finite");
}

Metric euclidean_metric() {
  return [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm(); };
}

Metric sphere_geodesic_metric() {
  return [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::acos(std::clamp(a.dot(b), -1.0, 1.0));
  };
}

bool CouplingPlan::is_permutation() const {
  std::vector<char> seen(assignment.size(), 0);
  for (long j : assignment) {
    if (j < 0 || j >= static_cast<long>(assignment.size()) || seen[j]) return false;
    seen[j] = 1;
  }
  return true;
}

W1Result wasserstein1(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                      const Metric& metric) {
  if (a.size() != b.size()) {
    throw ArgumentError("wasserstein1: measures must have equal sample counts");
  }
  if (a.dim() != b.dim()) {
    throw ArgumentError("wasserstein1: measures must share a dimension");
  }
  const long n = a.size();
  if (n > 4096) throw ArgumentError("wasserstein1: exact solver capped at 4096 points");

  CostMatrix cost(n, n);
  for (long i = 0; i < n; ++i) {
    const Eigen::VectorXd x = a.points.row(i);
    for (long j = 0; j < n; ++j) {
      cost(i, j) = metric(x, b.points.row(j));
    }
  }

  W1Result out;
  out.plan.assignment.resize(static_cast<std::size_t>(n));
  if (n == 1) {
    out.plan.assignment[0] = 0;
    out.plan.cost = cost(0, 0);
    out.distance = out.plan.cost;
    return out;
  }
  const std::vector<double> v = lap_dense(cost, out.plan.assignment);
  certify_assignment(cost, out.plan.assignment, v);
  double total = 0.0;
  for (long i = 0; i < n; ++i) total += cost(i, out.plan.assignment[i]);
  out.plan.cost = total / static_cast<double>(n);
  out.distance = out.plan.cost;
  return out;
}

RicciEstimate coarse_ricci_empirical(const KernelSampler& sample_x,
                                     const KernelSampler& sample_y, double rho, long n,
                                     const Metric& metric, Rng& rng, long resamples) {
  if (!(rho > 0.0)) {
    throw UndefinedCurvatureError("coarse_ricci_empirical: base distance must be positive");
  }
  if (n < 1) throw ArgumentError("coarse_ricci_empirical: need at least one sample");
  if (resamples < 20) {
    throw ArgumentError("coarse_ricci_empirical: bootstrap needs at least 20 resamples");
  }

  // Common random numbers: both kernels see the same substream per index.
  const std::uint64_t base = rng.engine()();
  Eigen::MatrixXd xs, ys;
  for (long i = 0; i < n; ++i) {
    Rng sub_x = Rng::substream(base, static_cast<std::uint64_t>(i));
    Rng sub_y = Rng::substream(base, static_cast<std::uint64_t>(i));
    const Eigen::VectorXd x = sample_x(sub_x);
    const Eigen::VectorXd y = sample_y(sub_y);
    if (i == 0) {
      xs.resize(n, x.size());
      ys.resize(n, y.size());
    }
    xs.row(i) = x;
    ys.row(i) = y;
  }

  RicciEstimate est;
  est.rho = rho;
  est.resamples = resamples;
  est.w1 = wasserstein1(EmpiricalMeasure(xs), EmpiricalMeasure(ys), metric).distance;
  est.kappa = 1.0 - est.w1 / rho;

  // Paired bootstrap: the same index draw reindexes both clouds, keeping the
  // coupling intact.
  std::vector<double> kappas;
  kappas.reserve(static_cast<std::size_t>(resamples));
  Eigen::MatrixXd bx(n, xs.cols()), by(n, ys.cols());
  for (long b = 0; b < resamples; ++b) {
    for (long i = 0; i < n; ++i) {
      const auto pick = static_cast<long>(rng.below(static_cast<std::uint64_t>(n)));
      bx.row(i) = xs.row(pick);
      by.row(i) = ys.row(pick);
    }
    const double w = wasserstein1(EmpiricalMeasure(bx), EmpiricalMeasure(by), metric).distance;
    kappas.push_back(1.0 - w / rho);
  }
  double mean = 0.0;
  for (double k : kappas) mean += k;
  mean /= static_cast<double>(resamples);
  double ss = 0.0;
  for (double k : kappas) ss += (k - mean) * (k - mean);
  est.std_error = std::sqrt(ss / static_cast<double>(resamples - 1));
  return est;
}

double sphere_kernel_w1_bound(double eps, double r, long d) {
  if (!(eps > 0.0)) throw ArgumentError("sphere_kernel_w1_bound: eps must be positive");
  if (!(r > 0.0) || !(r < M_PI / 2.0)) {
    throw ArgumentError("sphere_kernel_w1_bound: radius must lie in (0, pi/2)");
  }
  if (d < 2) throw ArgumentError("sphere_kernel_w1_bound: dimension must be at least 2");
  const double s = std::sin(r);
  return eps * (1.0 - 0.5 * s * s * (static_cast<double>(d - 1) / static_cast<double>(d)));
}

MonteCarloValue sphere_rotation_coupling_cost(double eps, double r, long d, long n,
                                              Rng& rng) {
  if (!(eps > 0.0)) throw ArgumentError("sphere_rotation_coupling_cost: eps must be positive");
  if (!(r > 0.0) || !(r < M_PI / 2.0)) {
    throw ArgumentError("sphere_rotation_coupling_cost: radius must lie in (0, pi/2)");
  }
  if (d < 2) throw ArgumentError("sphere_rotation_coupling_cost: dimension must be at least 2");
  if (n < 2) throw ArgumentError("sphere_rotation_coupling_cost: need at least two samples");

  // sin^2 phi with phi the polar angle of a uniform point on S^{d-1}: one
  // minus the squared first coordinate.
  const double sr2 = std::sin(r) * std::sin(r);
  double sum = 0.0, sumsq = 0.0;
  for (long i = 0; i < n; ++i) {
    const Eigen::VectorXd dir = rng.normal_vector(d).normalized();
    const double sin2_phi = 1.0 - dir[0] * dir[0];
    const double len = eps * std::sqrt(1.0 - sr2 * sin2_phi);
    sum += len;
    sumsq += len * len;
  }
  MonteCarloValue out;
  const double nn = static_cast<double>(n);
  out.value = sum / nn;
  const double var = std::max(0.0, (sumsq - nn * out.value * out.value) / (nn - 1.0));
  out.std_error = std::sqrt(var / nn);
  return out;
}

Eigen::VectorXd sphere_kernel_point(const Eigen::VectorXd& center, double r, Rng& rng) {
  if (std::abs(center.norm() - 1.0) > 1e-10) {
    throw ArgumentError("sphere_kernel_point: center must be a unit vector");
  }
  const Eigen::Index m = center.size();
  Eigen::VectorXd tangent;
  double norm = 0.0;
  do {
    const Eigen::VectorXd g = rng.normal_vector(m);
    tangent = g - center.dot(g) * center;
    norm = tangent.norm();
  } while (norm < 1e-12);
  tangent /= norm;
  return std::cos(r) * center + std::sin(r) * tangent;
}

}  // namespace hmcgeo
