#pragma once

#include <cstdint>
#include <random>

namespace peac {

using Rng = std::mt19937_64;

/// Independent random streams. Every consumer derives its generator from
/// (seed, stream, a, b) so toggling one consumer never shifts another.
enum class Stream : std::uint32_t {
  Init = 1,
  Sampling = 2,
  Distortion = 3,
  Batch = 4,
  Phantom = 5,
  Probe = 6,
  Analysis = 7,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform_real(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline bool bernoulli(Rng& rng, double p) {
  // p outside (0,1) must not consume differently from p inside it.
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return u < p;
}

}  // namespace peac
