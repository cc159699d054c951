#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hmcgeo/hmc.hpp"

namespace hmcgeo {

enum class Subcommand { sample, curvature, bound, registration };

// Target distribution selector shared by sample/curvature and by the bound
// command's ingredient derivation.
struct ModelSpec {
  std::string kind = "gaussian";       // gaussian | student-t
  long dim = 1;
  std::string precision = "identity";  // identity | exp-sq-decay
  double nu = 10.0;                    // student-t degrees of freedom

  // Throws ConfigError on an unknown kind/precision or invalid dim/nu.
  std::unique_ptr<TargetModel> build() const;
  Eigen::MatrixXd build_precision() const;
};

struct ScanParams {
  long frames_per_step = 1;
  bool at_trajectory_end = false;
  int histogram_bins = 50;
};

struct BoundParams {
  // Explicit ingredient values, used unless from_model is set.
  double kappa = 0.0;
  double sigma_sq = 0.0;
  double local_dim = 0.0;
  double granularity = 0.0;
  double lip = 1.0;
  double radius = 1.0;
  long burn_in = 0;
  // Log-spaced sweep over chain lengths.
  double t_min = 1e3;
  double t_max = 1e8;
  int points = 26;
  // Derive kappa/sigma_sq/local_dim/granularity/lip analytically from the
  // Gaussian model spec instead of the explicit fields.
  bool from_model = false;
};

struct RegisterParams {
  std::string fixed_path;
  std::string moving_path;
  double phi = 1.0;
  double lambda = 0.1;
  double spacing_x = 20.0;
  double spacing_y = 20.0;
  long iterations = 50;
  // Curvature frames per Gauss-Newton iterate; 0 means the field dimension.
  long curvature_frames = 0;
  // When positive, sample the registration posterior for this many steps,
  // warm-started at the Gauss-Newton solution.
  long sample_steps = 0;
};

// Fully resolved run description: defaults, overlaid by the JSON config file,
// overlaid by explicit command-line flags.
struct RunConfig {
  Subcommand subcommand = Subcommand::sample;
  ModelSpec model;
  HmcConfig hmc;
  ScanParams scan;
  BoundParams bound;
  RegisterParams reg;
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 1;

  // Cross-field checks shared by every subcommand; throws ConfigError.
  void validate() const;
};

// Parses argv, resolves the config, runs the subcommand, writes outputs under
// out_dir. Returns 0 on success, 1 on runtime failure, 2 on config error;
// diagnostics go to stderr. The default thread count comes from the
// HMCGEO_THREADS environment variable when the flag is absent.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

}  // namespace hmcgeo
