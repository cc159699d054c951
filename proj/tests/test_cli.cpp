#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "hmcgeo/cli.hpp"
#include "hmcgeo/image.hpp"
#include "json.hpp"

using namespace hmcgeo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path case_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "hmcgeo_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string field;
  while (std::getline(in, field, sep)) out.push_back(field);
  return out;
}

struct CliOutcome {
  int code = -1;
  std::string err;
};

// Runs the CLI in-process with fds 1 and 2 redirected, so diagnostics
// intended for the terminal can be asserted on without polluting test output.
CliOutcome run_captured(const std::vector<std::string>& args) {
  fs::path capture_dir = fs::temp_directory_path() / "hmcgeo_cli_tests";
  fs::create_directories(capture_dir);
  fs::path errfile = capture_dir / "stderr_capture.txt";
  fs::path outfile = capture_dir / "stdout_capture.txt";
  std::fflush(stdout);
  std::fflush(stderr);
  std::cout.flush();
  int saved_out = dup(1);
  int saved_err = dup(2);
  REQUIRE(saved_out >= 0);
  REQUIRE(saved_err >= 0);
  int red_out = open(outfile.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  int red_err = open(errfile.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  REQUIRE(red_out >= 0);
  REQUIRE(red_err >= 0);
  dup2(red_out, 1);
  dup2(red_err, 2);
  close(red_out);
  close(red_err);
  CliOutcome out;
  out.code = run_cli(args);
  std::fflush(stdout);
  std::fflush(stderr);
  std::cout.flush();
  dup2(saved_out, 1);
  dup2(saved_err, 2);
  close(saved_out);
  close(saved_err);
  out.err = slurp(errfile);
  return out;
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    out[entry.path().filename().string()] = slurp(entry.path());
  }
  return out;
}

ImageGrid blob_pgm_image(Eigen::Index w, Eigen::Index h, double amp, double sigma,
                         double shift) {
  ImageGrid img = ImageGrid::zeros(w, h);
  double cx = static_cast<double>(w) / 2.0;
  double cy = static_cast<double>(h) / 2.0;
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double dx = static_cast<double>(x) + shift - cx;
      double dy = static_cast<double>(y) - cy;
      img.at(x, y) = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  }
  return img;
}

}  // namespace

TEST_CASE("sample reruns into the same directory are byte-identical") {
  fs::path dir = case_dir("sample_rerun");
  std::string out = (dir / "run").string();
  std::vector<std::string> args = {"sample", "--model", "gaussian", "--dim", "1",
                                   "--T",    "1000",    "--seed",   "7",     "--out-dir",
                                   out};
  REQUIRE(run_cli(args) == 0);
  auto first = dir_bytes(out);
  REQUIRE(run_cli(args) == 0);
  CHECK(dir_bytes(out) == first);

  REQUIRE(first.count("config.json") == 1);
  REQUIRE(first.count("chain.csv") == 1);
  REQUIRE(first.count("summary.json") == 1);

  auto chain = lines(first["chain.csv"]);
  REQUIRE(chain.size() == 1001);
  CHECK(chain[0] == "step,energy,accepted,q0");
  CHECK(chain[1].substr(0, 2) == "1,");
  CHECK(chain[1000].substr(0, 5) == "1000,");

  json cfg = json::parse(first["config.json"]);
  CHECK(cfg["subcommand"] == "sample");
  CHECK(cfg["model"]["dim"] == 1);
  CHECK(cfg["seed"] == 7);
  CHECK(cfg["threads"] == 1);

  json summary = json::parse(first["summary.json"]);
  CHECK(summary["chain_length"] == 1000);
  CHECK(summary["integration_failures"] == 0);
  CHECK(summary["acceptance_rate"].get<double>() > 0.5);
  CHECK(summary["posterior_mean"].size() == 1);
}

TEST_CASE("sample respects thinning in the stored chain") {
  fs::path dir = case_dir("sample_thin");
  std::string out = (dir / "run").string();
  REQUIRE(run_cli({"sample", "--model", "gaussian", "--dim", "2", "--T", "100",
                   "--thin", "5", "--seed", "1", "--out-dir", out}) == 0);
  auto chain = lines(slurp(fs::path(out) / "chain.csv"));
  REQUIRE(chain.size() == 21);
  CHECK(chain[0] == "step,energy,accepted,q0,q1");
  CHECK(chain[1].substr(0, 2) == "5,");
  CHECK(chain[20].substr(0, 4) == "100,");
}

TEST_CASE("config file values are overridden by explicit flags") {
  fs::path dir = case_dir("precedence");
  fs::path cfg_path = dir / "cfg.json";
  {
    std::ofstream out(cfg_path);
    out << R"({"model": {"dim": 5}, "hmc": {"chain_length": 40}, "seed": 9})";
  }
  std::string out = (dir / "run").string();
  REQUIRE(run_cli({"sample", "--config", cfg_path.string(), "--dim", "3",
                   "--out-dir", out}) == 0);
  json cfg = json::parse(slurp(fs::path(out) / "config.json"));
  CHECK(cfg["model"]["dim"] == 3);          // flag beats file
  CHECK(cfg["hmc"]["chain_length"] == 40);  // file beats default
  CHECK(cfg["seed"] == 9);
  auto chain = lines(slurp(fs::path(out) / "chain.csv"));
  REQUIRE(chain.size() == 41);
  CHECK(split(chain[1], ',').size() == 6);  // step,energy,accepted,q0..q2
}

TEST_CASE("malformed configuration exits with code 2 and a diagnostic") {
  fs::path dir = case_dir("bad_config");
  std::string out = (dir / "run").string();

  SUBCASE("missing config file") {
    CliOutcome r = run_captured(
        {"sample", "--config", (dir / "absent.json").string(), "--out-dir", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("absent.json") != std::string::npos);
  }
  SUBCASE("config file that is not JSON") {
    fs::path p = dir / "broken.json";
    std::ofstream(p) << "{ not json";
    CliOutcome r = run_captured({"sample", "--config", p.string(), "--out-dir", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("not valid JSON") != std::string::npos);
  }
  SUBCASE("unknown key in a section is rejected") {
    fs::path p = dir / "unknown.json";
    std::ofstream(p) << R"({"model": {"dim": 2, "shape": "round"}})";
    CliOutcome r = run_captured({"sample", "--config", p.string(), "--out-dir", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("shape") != std::string::npos);
  }
  SUBCASE("unknown top-level key is rejected") {
    fs::path p = dir / "toplevel.json";
    std::ofstream(p) << R"({"mode": "fast"})";
    CliOutcome r = run_captured({"sample", "--config", p.string(), "--out-dir", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("mode") != std::string::npos);
  }
  SUBCASE("zero-length chain") {
    CliOutcome r = run_captured(
        {"sample", "--model", "gaussian", "--dim", "1", "--T", "0", "--out-dir", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("chain_length") != std::string::npos);
  }
  SUBCASE("zero curvature frames") {
    CliOutcome r = run_captured(
        {"curvature", "--model", "gaussian", "--dim", "2", "--frames", "0",
         "--out-dir", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("frames_per_step") != std::string::npos);
  }
  SUBCASE("curvature rejects thinned chains") {
    fs::path p = dir / "thinned.json";
    std::ofstream(p) << R"({"hmc": {"thin": 2}})";
    CliOutcome r = run_captured({"curvature", "--config", p.string(), "--out-dir", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("thin") != std::string::npos);
  }
  SUBCASE("exact integrator needs a gaussian target") {
    CliOutcome r = run_captured({"sample", "--model", "student-t", "--dim", "2",
                                 "--integrator", "exact-gaussian", "--out-dir", out});
    CHECK(r.code == 2);
  }
  SUBCASE("unknown model kind") {
    CliOutcome r = run_captured(
        {"sample", "--model", "cauchy", "--dim", "2", "--out-dir", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("cauchy") != std::string::npos);
  }
  SUBCASE("missing out dir") {
    CliOutcome r = run_captured({"sample", "--model", "gaussian", "--dim", "1"});
    CHECK(r.code == 2);
    CHECK(r.err.find("out_dir") != std::string::npos);
  }
  SUBCASE("unknown flag is a parse error") {
    CliOutcome r = run_captured({"sample", "--banana", "--out-dir", out});
    CHECK(r.code == 2);
  }
  SUBCASE("missing subcommand") {
    CliOutcome r = run_captured({});
    CHECK(r.code == 2);
  }
}

TEST_CASE("help requests succeed without running anything") {
  CHECK(run_captured({"--help"}).code == 0);
  CHECK(run_captured({"sample", "--help"}).code == 0);
  CHECK(run_captured({"bound", "--help"}).code == 0);
}

TEST_CASE("curvature scan output is reproducible and thread-count independent") {
  fs::path dir = case_dir("curvature");
  std::string out1 = (dir / "a").string();
  std::string out2 = (dir / "b").string();
  std::vector<std::string> base = {"curvature", "--model", "gaussian", "--dim", "15",
                                   "--T",       "150",     "--frames", "2",  "--seed",
                                   "3"};
  auto with_out = [&](const std::string& o, const std::string& threads) {
    std::vector<std::string> v = base;
    v.insert(v.end(), {"--out-dir", o, "--threads", threads});
    return v;
  };
  REQUIRE(run_cli(with_out(out1, "1")) == 0);
  REQUIRE(run_cli(with_out(out2, "2")) == 0);
  CHECK(slurp(fs::path(out1) / "scan.csv") == slurp(fs::path(out2) / "scan.csv"));

  auto scan = lines(slurp(fs::path(out1) / "scan.csv"));
  CHECK(scan[0] == "step,frame,sec");
  json hist = json::parse(slurp(fs::path(out1) / "histogram.json"));
  long rows = 150 - hist["skipped_steps"].get<long>();
  REQUIRE(scan.size() == static_cast<std::size_t>(2 * rows) + 1);
  long count_sum = 0;
  for (long c : hist["histogram"]["counts"].get<std::vector<long>>()) count_sum += c;
  CHECK(count_sum == 2 * rows);
  CHECK(hist["dim"] == 15);
  CHECK(hist["frames_per_step"] == 2);
  // Identity Gaussian curvature concentrates near 1/dim^2.
  double dim_sq_mean = hist["dim_sq_mean"].get<double>();
  CHECK(dim_sq_mean > 0.3);
  CHECK(dim_sq_mean < 3.0);
}

TEST_CASE("bound sweep is non-increasing with a regime label per row") {
  fs::path dir = case_dir("bound");
  std::string out = (dir / "run").string();
  REQUIRE(run_cli({"bound", "--kappa", "0.0048", "--sigma-sq", "100", "--local-dim",
                   "100", "--granularity", "20", "--lip", "0.2", "--radius", "0.25",
                   "--t-min", "1e3", "--t-max", "1e8", "--points", "26", "--out-dir",
                   out}) == 0);
  auto rows = lines(slurp(fs::path(out) / "bound.csv"));
  REQUIRE(rows.size() > 10);
  CHECK(rows[0] == "T,bound,regime");
  double prev_bound = 2.0;
  long prev_t = 0;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    auto fields = split(rows[k], ',');
    REQUIRE(fields.size() == 3);
    long t = std::stol(fields[0]);
    double b = std::stod(fields[1]);
    CHECK(t > prev_t);
    CHECK(b <= prev_bound + 1e-15);
    CHECK((fields[2] == "gaussian" || fields[2] == "exponential"));
    prev_t = t;
    prev_bound = b;
  }
  CHECK(prev_t == 100000000);
  CHECK(prev_bound <= 1e-3);
}

TEST_CASE("bound ingredients can be derived from the gaussian model") {
  fs::path dir = case_dir("bound_model");
  std::string out = (dir / "run").string();
  REQUIRE(run_cli({"bound", "--from-model", "--model", "gaussian", "--dim", "100",
                   "--precision", "exp-sq-decay", "--radius", "0.25", "--out-dir",
                   out}) == 0);
  auto rows = lines(slurp(fs::path(out) / "bound.csv"));
  auto last = split(rows.back(), ',');
  CHECK(std::stod(last[1]) <= 1e-3);

  SUBCASE("student-t has no analytic ingredients") {
    CliOutcome r = run_captured({"bound", "--from-model", "--model", "student-t",
                                 "--dim", "10", "--out-dir", out});
    CHECK(r.code == 2);
  }
}

TEST_CASE("nonpositive curvature makes the bound inapplicable") {
  fs::path dir = case_dir("bound_bad_kappa");
  std::string out = (dir / "run").string();
  CliOutcome r = run_captured({"bound", "--kappa", "-0.1", "--sigma-sq", "1",
                               "--local-dim", "1", "--granularity", "1", "--out-dir",
                               out});
  CHECK(r.code == 2);
  CHECK(r.err.find("bound inapplicable: nonpositive curvature") != std::string::npos);
}

TEST_CASE("register fits a blob pair and samples a reproducible posterior") {
  fs::path dir = case_dir("register");
  fs::path fixed = dir / "fixed.pgm";
  fs::path moving = dir / "moving.pgm";
  write_pgm(blob_pgm_image(180, 80, 0.85, 12.0, 0.0), moving.string());
  write_pgm(blob_pgm_image(180, 80, 0.80, 13.0, 3.0), fixed.string());

  std::string out = (dir / "run").string();
  std::vector<std::string> args = {
      "register",     "--fixed",     fixed.string(), "--moving",      moving.string(),
      "--phi",        "1",           "--lambda",     "0.45",          "--spacing-x",
      "20",           "--spacing-y", "20",           "--iters",       "12",
      "--curvature-frames", "4",     "--sample-steps", "40",          "--t1",
      "0.2",          "--eps",       "0.02",         "--seed",        "11",
      "--out-dir",    out};
  REQUIRE(run_cli(args) == 0);

  auto trace = lines(slurp(fs::path(out) / "ssd_trace.csv"));
  REQUIRE(trace.size() == 14);
  CHECK(trace[0] == "iteration,ssd,mean_sec");
  std::vector<double> ssd;
  for (std::size_t k = 1; k < trace.size(); ++k) {
    ssd.push_back(std::stod(split(trace[k], ',')[1]));
  }
  for (std::size_t k = 1; k < ssd.size(); ++k) CHECK(ssd[k] <= ssd[k - 1] + 1e-9);
  CHECK(ssd.back() < 0.2 * ssd.front());

  ImageGrid warped = read_pgm((fs::path(out) / "warped.pgm").string());
  CHECK(warped.width == 180);
  CHECK(warped.height == 80);

  json cfg = json::parse(slurp(fs::path(out) / "config.json"));
  CHECK(cfg["register"]["lambda"] == 0.45);

  auto field_rows = lines(slurp(fs::path(out) / "field.csv"));
  CHECK(field_rows[0] == "plane,ix,iy,weight");
  json summary = json::parse(slurp(fs::path(out) / "posterior_summary.json"));
  // 2 planes x ncx x ncy weights; the posterior mean has one entry per weight.
  REQUIRE(field_rows.size() == summary["posterior_mean"].size() + 1);
  CHECK(summary["chain_length"] == 40);

  auto posterior = lines(slurp(fs::path(out) / "posterior.csv"));
  REQUIRE(posterior.size() == 41);

  std::string first_posterior = slurp(fs::path(out) / "posterior.csv");
  REQUIRE(run_cli(args) == 0);
  CHECK(slurp(fs::path(out) / "posterior.csv") == first_posterior);

  SUBCASE("mismatched image sizes are rejected") {
    fs::path small = dir / "small.pgm";
    write_pgm(blob_pgm_image(20, 10, 0.5, 3.0, 0.0), small.string());
    CliOutcome r = run_captured({"register", "--fixed", fixed.string(), "--moving",
                                 small.string(), "--out-dir", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("sizes differ") != std::string::npos);
  }
  SUBCASE("missing image file is a config error") {
    CliOutcome r = run_captured({"register", "--fixed", (dir / "nope.pgm").string(),
                                 "--moving", moving.string(), "--out-dir", out});
    CHECK(r.code == 2);
  }
}

TEST_CASE("thread default comes from the environment when no flag is given") {
  fs::path dir = case_dir("env_threads");
  std::string out = (dir / "run").string();
  REQUIRE(setenv("HMCGEO_THREADS", "3", 1) == 0);
  REQUIRE(run_cli({"sample", "--model", "gaussian", "--dim", "1", "--T", "5",
                   "--out-dir", out}) == 0);
  json cfg = json::parse(slurp(fs::path(out) / "config.json"));
  CHECK(cfg["threads"] == 3);

  REQUIRE(run_cli({"sample", "--model", "gaussian", "--dim", "1", "--T", "5",
                   "--threads", "1", "--out-dir", out}) == 0);
  cfg = json::parse(slurp(fs::path(out) / "config.json"));
  CHECK(cfg["threads"] == 1);

  REQUIRE(setenv("HMCGEO_THREADS", "zebra", 1) == 0);
  CliOutcome r = run_captured(
      {"sample", "--model", "gaussian", "--dim", "1", "--T", "5", "--out-dir", out});
  CHECK(r.code == 2);
  CHECK(r.err.find("HMCGEO_THREADS") != std::string::npos);
  REQUIRE(unsetenv("HMCGEO_THREADS") == 0);
}
