#pragma once

// Deterministic random number generation.  Every stochastic routine in the
// library draws from an explicit Rng so that a (seed, stream) pair pins the
// entire output byte-for-byte, independent of thread count.  The engine is
// xoshiro256++ seeded through splitmix64; substreams are derived by hashing
// the parent identity with the child index rather than by sharing state.

#include <Eigen/Dense>

#include <cstdint>

namespace ldmix {

struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t s) : state(s) {}
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Independent child stream; repeated calls with distinct indices give
  /// streams that do not depend on how much the parent has been consumed.
  Rng split(std::uint64_t stream) const { return Rng(identity_, stream); }

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t integer(std::uint64_t n);

  /// Standard normal via Marsaglia's polar method (one spare cached).
  double normal();
  double normal(double mu, double sd) { return mu + sd * normal(); }

  /// N(mu, sd^2) conditioned on [lo, hi], by rejection.
  double truncated_normal(double mu, double sd, double lo, double hi);

  bool bernoulli(double p) { return uniform() < p; }

  /// Index draw proportional to `weights` (non-negative, not necessarily
  /// normalized).
  int categorical(const Eigen::VectorXd& weights);

  /// Vector of iid standard normals.
  Eigen::VectorXd normal_vector(Eigen::Index n);

 private:
  std::uint64_t s_[4];
  std::uint64_t identity_;  // hashed (seed, stream), the root for split()
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ldmix
