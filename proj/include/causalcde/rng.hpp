#pragma once

#include <cstdint>
#include <random>

#include "causalcde/common.hpp"

namespace causalcde {

// Deterministic random stream. All sampling routines are implemented here
// rather than via std::*_distribution so that streams are reproducible
// byte-for-byte across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : engine_(splitmix64(seed)), base_seed_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  // Standard normal via Box-Muller (cached second value).
  double normal() {
    if (has_cache_) {
      has_cache_ = false;
      return cache_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cache_ = r * std::sin(a);
    has_cache_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Normal truncated to two standard deviations (resampling scheme).
  double truncated_normal(double stddev) {
    double v = normal();
    while (std::abs(v) > 2.0) v = normal();
    return stddev * v;
  }

  // Gamma(shape, rate) via Marsaglia-Tsang, boosted for shape < 1.
  double gamma(double shape, double rate) {
    if (shape <= 0.0 || rate <= 0.0) {
      throw ContractError("Rng::gamma: shape and rate must be positive");
    }
    double boost = 1.0;
    double k = shape;
    if (k < 1.0) {
      boost = std::pow(uniform_positive(), 1.0 / k);
      k += 1.0;
    }
    const double d = k - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform_positive();
      if (u < 1.0 - 0.0331 * x * x * x * x) return boost * d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
        return boost * d * v / rate;
      }
    }
  }

  VectorXd normal_vector(int n) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  MatrixXd normal_matrix(int rows, int cols) {
    MatrixXd m(rows, cols);
    for (int j = 0; j < cols; ++j) {
      for (int i = 0; i < rows; ++i) m(i, j) = normal();
    }
    return m;
  }

  // Independent child stream; identical (seed, id) pairs give identical
  // streams regardless of what the parent generated in between.
  Rng derive(std::uint64_t id) const {
    return Rng(base_seed_ ^ (0x9e3779b97f4a7c15ULL * (id + 1)));
  }

  std::uint64_t base_seed() const { return base_seed_; }

 private:
  double uniform_positive() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return u;
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  std::uint64_t base_seed_ = 0;
  bool has_cache_ = false;
  double cache_ = 0.0;
};

}  // namespace causalcde
