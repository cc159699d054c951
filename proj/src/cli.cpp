#include "hmcgeo/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <set>
#include <sstream>
#include <utility>

#include "CLI11.hpp"
#include "hmcgeo/concentration.hpp"
#include "hmcgeo/errors.hpp"
#include "hmcgeo/geometry.hpp"
#include "hmcgeo/image.hpp"
#include "hmcgeo/registration.hpp"
#include "json.hpp"

namespace hmcgeo {
namespace {

using nlohmann::json;

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// JSON config file handling. Every object is checked against an allow-list
// so a typo fails loudly instead of silently keeping a default.

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : obj.items()) {
    if (!ok.count(item.key())) {
      throw ConfigError("unknown key \"" + item.key() + "\" in " + where);
    }
  }
}

template <typename T>
void get_to(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError("bad value for \"" + std::string(key) + "\" in " + where + ": " +
                      e.what());
  }
}

Integrator parse_integrator(const std::string& name) {
  if (name == "leapfrog") return Integrator::leapfrog;
  if (name == "exact-gaussian") return Integrator::exact_gaussian;
  throw ConfigError("unknown integrator \"" + name +
                    "\" (expected leapfrog or exact-gaussian)");
}

const char* integrator_name(Integrator i) {
  return i == Integrator::leapfrog ? "leapfrog" : "exact-gaussian";
}

void apply_json_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!root.is_object()) throw ConfigError("config file root must be a JSON object");
  check_keys(root, "config root",
             {"model", "hmc", "scan", "bound", "register", "out_dir", "seed", "threads"});

  get_to(root, "out_dir", cfg.out_dir, "config root");
  get_to(root, "seed", cfg.seed, "config root");
  get_to(root, "threads", cfg.threads, "config root");

  if (root.contains("model")) {
    const json& m = root["model"];
    check_keys(m, "\"model\"", {"kind", "dim", "precision", "nu"});
    get_to(m, "kind", cfg.model.kind, "\"model\"");
    get_to(m, "dim", cfg.model.dim, "\"model\"");
    get_to(m, "precision", cfg.model.precision, "\"model\"");
    get_to(m, "nu", cfg.model.nu, "\"model\"");
  }
  if (root.contains("hmc")) {
    const json& h = root["hmc"];
    check_keys(h, "\"hmc\"",
               {"trajectory_time", "step_size", "chain_length", "burn_in", "thin",
                "integrator"});
    get_to(h, "trajectory_time", cfg.hmc.trajectory_time, "\"hmc\"");
    get_to(h, "step_size", cfg.hmc.step_size, "\"hmc\"");
    get_to(h, "chain_length", cfg.hmc.chain_length, "\"hmc\"");
    get_to(h, "burn_in", cfg.hmc.burn_in, "\"hmc\"");
    get_to(h, "thin", cfg.hmc.thin, "\"hmc\"");
    if (h.contains("integrator")) {
      std::string name;
      get_to(h, "integrator", name, "\"hmc\"");
      cfg.hmc.integrator = parse_integrator(name);
    }
  }
  if (root.contains("scan")) {
    const json& s = root["scan"];
    check_keys(s, "\"scan\"", {"frames_per_step", "at_trajectory_end", "histogram_bins"});
    get_to(s, "frames_per_step", cfg.scan.frames_per_step, "\"scan\"");
    get_to(s, "at_trajectory_end", cfg.scan.at_trajectory_end, "\"scan\"");
    get_to(s, "histogram_bins", cfg.scan.histogram_bins, "\"scan\"");
  }
  if (root.contains("bound")) {
    const json& b = root["bound"];
    check_keys(b, "\"bound\"",
               {"kappa", "sigma_sq", "local_dim", "granularity", "lip", "radius",
                "burn_in", "t_min", "t_max", "points", "from_model"});
    get_to(b, "kappa", cfg.bound.kappa, "\"bound\"");
    get_to(b, "sigma_sq", cfg.bound.sigma_sq, "\"bound\"");
    get_to(b, "local_dim", cfg.bound.local_dim, "\"bound\"");
    get_to(b, "granularity", cfg.bound.granularity, "\"bound\"");
    get_to(b, "lip", cfg.bound.lip, "\"bound\"");
    get_to(b, "radius", cfg.bound.radius, "\"bound\"");
    get_to(b, "burn_in", cfg.bound.burn_in, "\"bound\"");
    get_to(b, "t_min", cfg.bound.t_min, "\"bound\"");
    get_to(b, "t_max", cfg.bound.t_max, "\"bound\"");
    get_to(b, "points", cfg.bound.points, "\"bound\"");
    get_to(b, "from_model", cfg.bound.from_model, "\"bound\"");
  }
  if (root.contains("register")) {
    const json& r = root["register"];
    check_keys(r, "\"register\"",
               {"fixed", "moving", "phi", "lambda", "spacing_x", "spacing_y",
                "iterations", "curvature_frames", "sample_steps"});
    get_to(r, "fixed", cfg.reg.fixed_path, "\"register\"");
    get_to(r, "moving", cfg.reg.moving_path, "\"register\"");
    get_to(r, "phi", cfg.reg.phi, "\"register\"");
    get_to(r, "lambda", cfg.reg.lambda, "\"register\"");
    get_to(r, "spacing_x", cfg.reg.spacing_x, "\"register\"");
    get_to(r, "spacing_y", cfg.reg.spacing_y, "\"register\"");
    get_to(r, "iterations", cfg.reg.iterations, "\"register\"");
    get_to(r, "curvature_frames", cfg.reg.curvature_frames, "\"register\"");
    get_to(r, "sample_steps", cfg.reg.sample_steps, "\"register\"");
  }
}

const char* subcommand_name(Subcommand s) {
  switch (s) {
    case Subcommand::sample: return "sample";
    case Subcommand::curvature: return "curvature";
    case Subcommand::bound: return "bound";
    case Subcommand::registration: return "register";
  }
  return "?";
}

json resolved_json(const RunConfig& cfg) {
  json j;
  j["subcommand"] = subcommand_name(cfg.subcommand);
  j["model"] = {{"kind", cfg.model.kind},
                {"dim", cfg.model.dim},
                {"precision", cfg.model.precision},
                {"nu", cfg.model.nu}};
  j["hmc"] = {{"trajectory_time", cfg.hmc.trajectory_time},
              {"step_size", cfg.hmc.step_size},
              {"chain_length", cfg.hmc.chain_length},
              {"burn_in", cfg.hmc.burn_in},
              {"thin", cfg.hmc.thin},
              {"integrator", integrator_name(cfg.hmc.integrator)}};
  j["scan"] = {{"frames_per_step", cfg.scan.frames_per_step},
               {"at_trajectory_end", cfg.scan.at_trajectory_end},
               {"histogram_bins", cfg.scan.histogram_bins}};
  j["bound"] = {{"kappa", cfg.bound.kappa},
                {"sigma_sq", cfg.bound.sigma_sq},
                {"local_dim", cfg.bound.local_dim},
                {"granularity", cfg.bound.granularity},
                {"lip", cfg.bound.lip},
                {"radius", cfg.bound.radius},
                {"burn_in", cfg.bound.burn_in},
                {"t_min", cfg.bound.t_min},
                {"t_max", cfg.bound.t_max},
                {"points", cfg.bound.points},
                {"from_model", cfg.bound.from_model}};
  j["register"] = {{"fixed", cfg.reg.fixed_path},
                   {"moving", cfg.reg.moving_path},
                   {"phi", cfg.reg.phi},
                   {"lambda", cfg.reg.lambda},
                   {"spacing_x", cfg.reg.spacing_x},
                   {"spacing_y", cfg.reg.spacing_y},
                   {"iterations", cfg.reg.iterations},
                   {"curvature_frames", cfg.reg.curvature_frames},
                   {"sample_steps", cfg.reg.sample_steps}};
  j["out_dir"] = cfg.out_dir;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  return j;
}

// ---------------------------------------------------------------------------
// Output writers. Floats use %.17g so reruns are byte-identical and values
// round-trip exactly.

void write_chain_csv(const std::filesystem::path& path, const ChainResult& chain) {
  std::ostringstream out;
  out << "step,energy,accepted";
  for (Eigen::Index c = 0; c < chain.samples.cols(); ++c) out << ",q" << c;
  out << "\n";
  for (Eigen::Index r = 0; r < chain.samples.rows(); ++r) {
    long step = (static_cast<long>(r) + 1) * chain.thin;
    out << step << ',' << g17(chain.energies[step - 1]) << ','
        << (chain.accepted[static_cast<std::size_t>(step - 1)] ? 1 : 0);
    for (Eigen::Index c = 0; c < chain.samples.cols(); ++c) {
      out << ',' << g17(chain.samples(r, c));
    }
    out << "\n";
  }
  write_text(path, out.str());
}

json chain_summary(const ChainResult& chain) {
  json j;
  j["chain_length"] = chain.chain_length;
  j["burn_in"] = chain.burn_in;
  j["trajectory_time"] = chain.trajectory_time;
  j["step_size"] = chain.step_size;
  j["acceptance_rate"] = chain.acceptance_rate;
  j["integration_failures"] = chain.integration_failures;
  j["posterior_mean"] = std::vector<double>(
      chain.posterior_mean.data(), chain.posterior_mean.data() + chain.posterior_mean.size());
  return j;
}

void write_scan_csv(const std::filesystem::path& path, const CurvatureScan& scan) {
  std::ostringstream out;
  out << "step,frame,sec\n";
  for (Eigen::Index r = 0; r < scan.samples.rows(); ++r) {
    for (Eigen::Index f = 0; f < scan.samples.cols(); ++f) {
      out << scan.step_of_row[static_cast<std::size_t>(r)] << ',' << f << ','
          << g17(scan.samples(r, f)) << "\n";
    }
  }
  write_text(path, out.str());
}

json scan_summary(const CurvatureScan& scan) {
  json j;
  j["dim"] = scan.dim;
  j["frames_per_step"] = scan.frames_per_step;
  j["skipped_steps"] = scan.skipped_steps;
  j["min"] = scan.min;
  j["mean"] = scan.mean;
  j["stddev"] = scan.stddev;
  j["dim_sq_min"] = scan.dim_sq_min;
  j["dim_sq_mean"] = scan.dim_sq_mean;
  j["dim_sq_stddev"] = scan.dim_sq_stddev;
  j["histogram"] = {
      {"edges", std::vector<double>(scan.histogram_edges.data(),
                                    scan.histogram_edges.data() + scan.histogram_edges.size())},
      {"counts", scan.histogram_counts}};
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands.

void cmd_sample(const RunConfig& cfg) {
  std::unique_ptr<TargetModel> model = cfg.model.build();
  HmcConfig hmc = cfg.hmc;
  hmc.seed = cfg.seed;
  ChainResult chain = run_chain(*model, Eigen::VectorXd::Zero(model->dim()), hmc);
  write_chain_csv(std::filesystem::path(cfg.out_dir) / "chain.csv", chain);
  write_text(std::filesystem::path(cfg.out_dir) / "summary.json",
             chain_summary(chain).dump(2) + "\n");
}

void cmd_curvature(const RunConfig& cfg) {
  std::unique_ptr<TargetModel> model = cfg.model.build();
  HmcConfig hmc = cfg.hmc;
  hmc.seed = cfg.seed;
  ChainResult chain = run_chain(*model, Eigen::VectorXd::Zero(model->dim()), hmc);
  // The chain consumes stream cfg.seed; the scan's frames come from the next
  // stream so the two stay independent and individually reproducible.
  Rng scan_rng(cfg.seed + 1);
  ScanOptions opts;
  opts.at_trajectory_end = cfg.scan.at_trajectory_end;
  opts.histogram_bins = cfg.scan.histogram_bins;
  opts.threads = cfg.threads;
  CurvatureScan scan =
      curvature_scan(*model, chain, cfg.scan.frames_per_step, scan_rng, opts);
  write_scan_csv(std::filesystem::path(cfg.out_dir) / "scan.csv", scan);
  json j = scan_summary(scan);
  j["chain_acceptance_rate"] = chain.acceptance_rate;
  write_text(std::filesystem::path(cfg.out_dir) / "histogram.json", j.dump(2) + "\n");
}

void cmd_bound(const RunConfig& cfg) {
  ConcentrationInputs in;
  if (cfg.bound.from_model) {
    if (cfg.model.kind != "gaussian") {
      throw ConfigError("--from-model requires a gaussian model");
    }
    in = gaussian_ingredients(cfg.model.build_precision(), cfg.model.dim);
  } else {
    in.kappa = cfg.bound.kappa;
    in.sigma_sq = cfg.bound.sigma_sq;
    in.local_dim = cfg.bound.local_dim;
    in.granularity = cfg.bound.granularity;
    in.lip = cfg.bound.lip;
  }
  in.radius = cfg.bound.radius;
  in.burn_in = cfg.bound.burn_in;
  if (!(in.kappa > 0.0)) {
    throw ConfigError("bound inapplicable: nonpositive curvature");
  }

  std::ostringstream out;
  out << "T,bound,regime\n";
  const double lt0 = std::log(cfg.bound.t_min);
  const double lt1 = std::log(cfg.bound.t_max);
  long previous = 0;
  for (int k = 0; k < cfg.bound.points; ++k) {
    double f = cfg.bound.points == 1 ? 0.0
                                     : static_cast<double>(k) / (cfg.bound.points - 1);
    long t = std::lround(std::exp(lt0 + f * (lt1 - lt0)));
    if (t <= previous) continue;
    previous = t;
    in.chain_length = t;
    BoundResult b = concentration_bound(in);
    out << t << ',' << g17(b.probability) << ','
        << (b.regime == BoundRegime::gaussian ? "gaussian" : "exponential") << "\n";
  }
  write_text(std::filesystem::path(cfg.out_dir) / "bound.csv", out.str());
}

void cmd_register(const RunConfig& cfg) {
  ImageGrid fixed, moving;
  try {
    fixed = read_pgm(cfg.reg.fixed_path);
    moving = read_pgm(cfg.reg.moving_path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  if (fixed.width != moving.width || fixed.height != moving.height) {
    throw ConfigError("fixed and moving image sizes differ (" +
                      std::to_string(fixed.width) + "x" + std::to_string(fixed.height) +
                      " vs " + std::to_string(moving.width) + "x" +
                      std::to_string(moving.height) + ")");
  }
  SplineField field = SplineField::fit_to_image(fixed.width, fixed.height,
                                                cfg.reg.spacing_x, cfg.reg.spacing_y);
  Rng rng(cfg.seed);
  GaussNewtonTrace trace =
      gauss_newton_register(fixed, moving, AffinePre::identity(), field, cfg.reg.phi,
                            cfg.reg.lambda, cfg.reg.iterations, rng,
                            cfg.reg.curvature_frames);

  std::ostringstream ssd;
  ssd << "iteration,ssd,mean_sec\n";
  for (std::size_t k = 0; k < trace.records.size(); ++k) {
    ssd << k << ',' << g17(trace.records[k].ssd) << ','
        << g17(trace.records[k].mean_curvature) << "\n";
  }
  write_text(std::filesystem::path(cfg.out_dir) / "ssd_trace.csv", ssd.str());

  std::ostringstream fcsv;
  fcsv << "plane,ix,iy,weight\n";
  const SplineField& ff = trace.field;
  for (int plane = 0; plane < 2; ++plane) {
    for (Eigen::Index i = 0; i < ff.ncx; ++i) {
      for (Eigen::Index j = 0; j < ff.ncy; ++j) {
        double w = ff.weights[plane * ff.points_per_plane() + i * ff.ncy + j];
        fcsv << (plane == 0 ? 'x' : 'y') << ',' << i << ',' << j << ',' << g17(w) << "\n";
      }
    }
  }
  write_text(std::filesystem::path(cfg.out_dir) / "field.csv", fcsv.str());

  WarpResult warped = warp(moving, AffinePre::identity(), trace.field);
  write_pgm(warped.image,
            (std::filesystem::path(cfg.out_dir) / "warped.pgm").string());

  if (cfg.reg.sample_steps > 0) {
    RegistrationTarget target(fixed, moving, AffinePre::identity(), field, cfg.reg.phi,
                              cfg.reg.lambda);
    HmcConfig hmc = cfg.hmc;
    hmc.chain_length = cfg.reg.sample_steps;
    hmc.seed = cfg.seed;
    ChainResult chain =
        sample_registration_posterior(target, trace.field.weights, hmc);
    write_chain_csv(std::filesystem::path(cfg.out_dir) / "posterior.csv", chain);
    write_text(std::filesystem::path(cfg.out_dir) / "posterior_summary.json",
               chain_summary(chain).dump(2) + "\n");
  }
}

int default_threads() {
  const char* env = std::getenv("HMCGEO_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (end == nullptr || *end != '\0' || v < 1 || v > 4096) {
    throw ConfigError(std::string("invalid HMCGEO_THREADS value \"") + env + "\"");
  }
  return static_cast<int>(v);
}

}  // namespace

std::unique_ptr<TargetModel> ModelSpec::build() const {
  Eigen::MatrixXd prec = build_precision();
  if (kind == "gaussian") return std::make_unique<GaussianTarget>(std::move(prec));
  if (kind == "student-t") {
    if (!(nu > 0.0) || !std::isfinite(nu)) {
      throw ConfigError("student-t requires nu > 0");
    }
    return std::make_unique<StudentTTarget>(std::move(prec), nu);
  }
  throw ConfigError("unknown model kind \"" + kind +
                    "\" (expected gaussian or student-t)");
}

Eigen::MatrixXd ModelSpec::build_precision() const {
  if (dim < 1) throw ConfigError("model dim must be >= 1");
  if (precision == "identity") return GaussianTarget::identity_precision(dim);
  if (precision == "exp-sq-decay") return GaussianTarget::exp_sq_decay_precision(dim);
  throw ConfigError("unknown precision \"" + precision +
                    "\" (expected identity or exp-sq-decay)");
}

void RunConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (model.kind != "gaussian" && model.kind != "student-t") {
    throw ConfigError("unknown model kind \"" + model.kind + "\"");
  }
  if (model.precision != "identity" && model.precision != "exp-sq-decay") {
    throw ConfigError("unknown precision \"" + model.precision + "\"");
  }
  if (model.dim < 1) throw ConfigError("model dim must be >= 1");
  if (hmc.chain_length < 1) throw ConfigError("chain_length must be >= 1");
  if (hmc.burn_in < 0 || hmc.burn_in > hmc.chain_length) {
    throw ConfigError("burn_in must lie in [0, chain_length]");
  }
  if (hmc.thin < 0) throw ConfigError("thin must be >= 0");
  if (hmc.integrator == Integrator::exact_gaussian && model.kind != "gaussian" &&
      (subcommand == Subcommand::sample || subcommand == Subcommand::curvature)) {
    throw ConfigError("exact-gaussian integrator requires a gaussian model");
  }
  if (subcommand == Subcommand::curvature) {
    if (scan.frames_per_step < 1) throw ConfigError("frames_per_step must be >= 1");
    if (scan.histogram_bins < 1) throw ConfigError("histogram_bins must be >= 1");
    if (hmc.thin != 1) {
      throw ConfigError("curvature scans need every state: thin must be 1");
    }
  }
  if (subcommand == Subcommand::bound) {
    if (!(bound.t_min >= 1.0)) throw ConfigError("t_min must be >= 1");
    if (!(bound.t_max >= bound.t_min)) throw ConfigError("t_max must be >= t_min");
    if (bound.points < 1) throw ConfigError("points must be >= 1");
    if (bound.burn_in < 0) throw ConfigError("bound burn_in must be >= 0");
  }
  if (subcommand == Subcommand::registration) {
    if (reg.fixed_path.empty() || reg.moving_path.empty()) {
      throw ConfigError("register needs --fixed and --moving images");
    }
    if (!(reg.phi > 0.0)) throw ConfigError("phi must be > 0");
    if (!(reg.lambda > 0.0)) throw ConfigError("lambda must be > 0");
    if (!(reg.spacing_x >= 1.0) || !(reg.spacing_y >= 1.0)) {
      throw ConfigError("control-point spacings must be >= 1 pixel");
    }
    if (reg.iterations < 0) throw ConfigError("iterations must be >= 0");
    if (reg.curvature_frames < 0) throw ConfigError("curvature_frames must be >= 0");
    if (reg.sample_steps < 0) throw ConfigError("sample_steps must be >= 0");
  }
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{
      "hmcgeo: Hamiltonian Monte Carlo with curvature scans, concentration "
      "bounds, and B-spline image registration.\n"
      "Config precedence: command-line flags override the --config JSON file, "
      "which overrides built-in defaults. All floats in CSV outputs use 17 "
      "significant digits; every run writes config.json echoing the resolved "
      "configuration. Exit codes: 0 success, 1 runtime failure, 2 config error."};
  app.require_subcommand(1);

  RunConfig cfg;
  cfg.threads = 0;  // resolved after parsing: flag, else env, else 1

  struct Staging {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string model = "gaussian";
    long dim = 1;
    std::string precision = "identity";
    double nu = 10.0;
    double t1 = 0.0;
    double eps = 0.0;
    long chain_length = 1000;
    long burn_in = 0;
    long thin = 1;
    std::string integrator = "leapfrog";
    long frames = 1;
    bool at_end = false;
    int bins = 50;
    double kappa = 0.0, sigma_sq = 0.0, local_dim = 0.0, granularity = 0.0;
    double lip = 1.0, radius = 1.0;
    long bound_burn_in = 0;
    double t_min = 1e3, t_max = 1e8;
    int points = 26;
    bool from_model = false;
    std::string fixed, moving;
    double phi = 1.0, lambda = 0.1;
    double spacing_x = 20.0, spacing_y = 20.0;
    long iterations = 50, curvature_frames = 0, sample_steps = 0;
  } st;

  // Flags recorded with their effect on cfg; applied after the JSON file so
  // explicitly passed options win.
  std::vector<std::pair<CLI::Option*, std::function<void()>>> appliers;
  auto bind = [&appliers](CLI::Option* opt, std::function<void()> apply) {
    appliers.emplace_back(opt, std::move(apply));
  };

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", st.config_path, "JSON config file");
    bind(sub->add_option("--out-dir", st.out_dir, "output directory (required)"),
         [&] { cfg.out_dir = st.out_dir; });
    bind(sub->add_option("--seed", st.seed, "RNG seed"), [&] { cfg.seed = st.seed; });
    bind(sub->add_option("--threads", st.threads,
                         "worker threads (default: HMCGEO_THREADS env var, else 1)"),
         [&] { cfg.threads = st.threads; });
  };
  auto add_model = [&](CLI::App* sub) {
    bind(sub->add_option("--model", st.model, "target: gaussian | student-t"),
         [&] { cfg.model.kind = st.model; });
    bind(sub->add_option("--dim", st.dim, "target dimension"),
         [&] { cfg.model.dim = st.dim; });
    bind(sub->add_option("--precision", st.precision,
                         "precision matrix: identity | exp-sq-decay"),
         [&] { cfg.model.precision = st.precision; });
    bind(sub->add_option("--nu", st.nu, "student-t degrees of freedom"),
         [&] { cfg.model.nu = st.nu; });
  };
  auto add_hmc = [&](CLI::App* sub) {
    bind(sub->add_option("--T", st.chain_length, "chain length (steps)"),
         [&] { cfg.hmc.chain_length = st.chain_length; });
    bind(sub->add_option("--burn-in", st.burn_in, "steps excluded from estimators"),
         [&] { cfg.hmc.burn_in = st.burn_in; });
    bind(sub->add_option("--t1", st.t1, "trajectory time (<= 0: dim^-1/2)"),
         [&] { cfg.hmc.trajectory_time = st.t1; });
    bind(sub->add_option("--eps", st.eps, "leapfrog step size (<= 0: t1/20)"),
         [&] { cfg.hmc.step_size = st.eps; });
    bind(sub->add_option("--integrator", st.integrator,
                         "leapfrog | exact-gaussian"),
         [&] { cfg.hmc.integrator = parse_integrator(st.integrator); });
  };

  CLI::App* sample = app.add_subcommand(
      "sample",
      "Run one HMC chain from the mode.\n"
      "Writes chain.csv (step,energy,accepted,q0..q{d-1}) and summary.json.");
  add_common(sample);
  add_model(sample);
  add_hmc(sample);
  bind(sample->add_option("--thin", st.thin, "sample storage stride (0: none)"),
       [&] { cfg.hmc.thin = st.thin; });

  CLI::App* curvature = app.add_subcommand(
      "curvature",
      "Run a chain, then sample sectional curvatures of the trajectory-energy "
      "Jacobi metric at every step.\n"
      "Writes scan.csv (step,frame,sec) and histogram.json.");
  add_common(curvature);
  add_model(curvature);
  add_hmc(curvature);
  bind(curvature->add_option("--frames", st.frames, "curvature frames per step"),
       [&] { cfg.scan.frames_per_step = st.frames; });
  bind(curvature->add_flag("--at-end", st.at_end,
                           "evaluate at trajectory ends instead of starts"),
       [&] { cfg.scan.at_trajectory_end = st.at_end; });
  bind(curvature->add_option("--bins", st.bins, "histogram bin count"),
       [&] { cfg.scan.histogram_bins = st.bins; });

  CLI::App* bound = app.add_subcommand(
      "bound",
      "Evaluate the two-regime concentration bound over a log-spaced sweep of "
      "chain lengths.\n"
      "Writes bound.csv (T,bound,regime).");
  add_common(bound);
  add_model(bound);
  bind(bound->add_option("--kappa", st.kappa, "coarse Ricci curvature lower bound"),
       [&] { cfg.bound.kappa = st.kappa; });
  bind(bound->add_option("--sigma-sq", st.sigma_sq, "coarse diffusion constant"),
       [&] { cfg.bound.sigma_sq = st.sigma_sq; });
  bind(bound->add_option("--local-dim", st.local_dim, "local dimension"),
       [&] { cfg.bound.local_dim = st.local_dim; });
  bind(bound->add_option("--granularity", st.granularity, "granularity sigma_inf"),
       [&] { cfg.bound.granularity = st.granularity; });
  bind(bound->add_option("--lip", st.lip, "observable Lipschitz norm"),
       [&] { cfg.bound.lip = st.lip; });
  bind(bound->add_option("--radius", st.radius, "deviation radius r"),
       [&] { cfg.bound.radius = st.radius; });
  bind(bound->add_option("--bound-burn-in", st.bound_burn_in, "burn-in T0"),
       [&] { cfg.bound.burn_in = st.bound_burn_in; });
  bind(bound->add_option("--t-min", st.t_min, "sweep start"),
       [&] { cfg.bound.t_min = st.t_min; });
  bind(bound->add_option("--t-max", st.t_max, "sweep end"),
       [&] { cfg.bound.t_max = st.t_max; });
  bind(bound->add_option("--points", st.points, "sweep points (log-spaced)"),
       [&] { cfg.bound.points = st.points; });
  bind(bound->add_flag("--from-model", st.from_model,
                       "derive ingredients analytically from the gaussian model"),
       [&] { cfg.bound.from_model = st.from_model; });

  CLI::App* reg = app.add_subcommand(
      "register",
      "Gauss-Newton B-spline registration of two same-size PGM images, with "
      "optional posterior sampling warm-started at the solution.\n"
      "Writes ssd_trace.csv (iteration,ssd,mean_sec), field.csv "
      "(plane,ix,iy,weight), warped.pgm, and with --sample-steps also "
      "posterior.csv and posterior_summary.json.");
  add_common(reg);
  add_hmc(reg);
  bind(reg->add_option("--fixed", st.fixed, "fixed image (PGM)"),
       [&] { cfg.reg.fixed_path = st.fixed; });
  bind(reg->add_option("--moving", st.moving, "moving image (PGM)"),
       [&] { cfg.reg.moving_path = st.moving; });
  bind(reg->add_option("--phi", st.phi, "data term weight"),
       [&] { cfg.reg.phi = st.phi; });
  bind(reg->add_option("--lambda", st.lambda, "membrane prior weight"),
       [&] { cfg.reg.lambda = st.lambda; });
  bind(reg->add_option("--spacing-x", st.spacing_x, "control spacing x (px)"),
       [&] { cfg.reg.spacing_x = st.spacing_x; });
  bind(reg->add_option("--spacing-y", st.spacing_y, "control spacing y (px)"),
       [&] { cfg.reg.spacing_y = st.spacing_y; });
  bind(reg->add_option("--iters", st.iterations, "Gauss-Newton iterations"),
       [&] { cfg.reg.iterations = st.iterations; });
  bind(reg->add_option("--curvature-frames", st.curvature_frames,
                       "curvature frames per iterate (0: field dimension)"),
       [&] { cfg.reg.curvature_frames = st.curvature_frames; });
  bind(reg->add_option("--sample-steps", st.sample_steps,
                       "posterior chain length (0: skip sampling)"),
       [&] { cfg.reg.sample_steps = st.sample_steps; });

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  static const char* kName = "hmcgeo";
  argv.push_back(kName);
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      int code = app.exit(e);  // prints help or the parse diagnostic
      return code == 0 ? 0 : 2;
    }

    if (app.got_subcommand(sample)) cfg.subcommand = Subcommand::sample;
    if (app.got_subcommand(curvature)) cfg.subcommand = Subcommand::curvature;
    if (app.got_subcommand(bound)) cfg.subcommand = Subcommand::bound;
    if (app.got_subcommand(reg)) cfg.subcommand = Subcommand::registration;

    if (!st.config_path.empty()) apply_json_file(cfg, st.config_path);
    for (const auto& [opt, apply] : appliers) {
      if (opt->count() > 0) apply();
    }
    if (cfg.threads == 0) cfg.threads = default_threads();
    cfg.validate();

    std::filesystem::create_directories(cfg.out_dir);
    write_text(std::filesystem::path(cfg.out_dir) / "config.json",
               resolved_json(cfg).dump(2) + "\n");

    switch (cfg.subcommand) {
      case Subcommand::sample: cmd_sample(cfg); break;
      case Subcommand::curvature: cmd_curvature(cfg); break;
      case Subcommand::bound: cmd_bound(cfg); break;
      case Subcommand::registration: cmd_register(cfg); break;
    }
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "hmcgeo: %s\n", e.what());
    return 2;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "hmcgeo: %s\n", e.what());
    return 2;
  } catch (const NegativeCurvatureError& e) {
    std::fprintf(stderr, "hmcgeo: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hmcgeo: %s\n", e.what());
    return 1;
  }
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  args.reserve(argc > 0 ? static_cast<std::size_t>(argc - 1) : 0);
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace hmcgeo
