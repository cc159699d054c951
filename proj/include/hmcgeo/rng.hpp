#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace hmcgeo {

// Seedable random generator wrapping std::mt19937_64. Every stochastic
// operation in the library draws from an explicitly passed Rng so that runs
// are reproducible from a single seed. Independent substreams for parallel
// or per-index work are derived with substream(), which mixes (seed, index)
// into a fresh engine seed; results are therefore independent of thread
// count and iteration order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng substream(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix(seed ^ mix(index + 0x9E3779B97F4A7C15ull)));
  }

  double normal() { return gauss_(engine_); }

  double uniform() { return unif_(engine_); }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = gauss_(engine_);
    return z;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  // splitmix64 finalizer; decorrelates consecutive seeds.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
};

}  // namespace hmcgeo
