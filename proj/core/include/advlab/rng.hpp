#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace advlab {

/// Purpose tags for the independent RNG streams. Each consumer draws from its
/// own stream so enabling one feature (e.g. the self-supervised transform)
/// never perturbs the draws seen by another.
enum class RngStream : std::uint32_t {
  Init = 1,       // weight initialization
  Shuffle = 2,    // epoch shuffling
  Augment = 3,    // crop/flip augmentation
  SsTransform = 4,  // rotation / jigsaw label sampling
  Attack = 5,     // PGD random start
};

inline std::mt19937 make_rng(std::uint64_t seed, RngStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937(seq);
}

/// Uniform in [0, 1) with 24-bit resolution; avoids the stdlib distributions
/// so draws are identical across standard-library implementations.
inline float uniform_unit(std::mt19937& g) {
  return static_cast<float>(g() >> 8) * 0x1p-24f;
}

inline float uniform_range(std::mt19937& g, float lo, float hi) {
  return lo + (hi - lo) * uniform_unit(g);
}

inline std::uint32_t uniform_below(std::mt19937& g, std::uint32_t n) { return g() % n; }

/// Marsaglia polar method on uniform_unit draws; same portability rationale.
inline float normal_unit(std::mt19937& g) {
  while (true) {
    const float u = 2.0f * uniform_unit(g) - 1.0f;
    const float v = 2.0f * uniform_unit(g) - 1.0f;
    const float s = u * u + v * v;
    if (s > 0.0f && s < 1.0f)
      return u * std::sqrt(-2.0f * std::log(s) / s);
  }
}

}  // namespace advlab
