#pragma once

#include <array>
#include <cstdint>

namespace korigins {

/// Deterministic xoshiro256** generator (256-bit state).
///
/// The state is expanded from a 64-bit seed with splitmix64. Child streams
/// are derived from (seed, stream id) by mixing the id into the splitmix64
/// seed, so every logical task can own an independent generator. Gaussian
/// samples use the Box-Muller transform; both values of each pair are
/// consumed in order (cosine branch first).
///
/// The algorithm is frozen: datasets and checkpoints depend on it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t next_u64();

  /// Uniform double in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in the inclusive range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal sample.
  double normal();

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// One sample of N(mu, sigma^2). sigma == 0 returns mu exactly without
/// consuming randomness. Throws ArgumentError for negative sigma.
double gaussian_draw(Rng& rng, double mu, double sigma);

std::uint64_t splitmix64(std::uint64_t& state);

/// Stable 64-bit mix of two values, used to derive stream and seed ids.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace korigins
