#pragma once

// Seeded random streams. Engine: std::mt19937_64. Variates are built from raw
// 64-bit outputs here (not std:: distributions) so that every stream is
// reproducible across standard library implementations.
//
// Stream splitting: derive_seed(master, {a, b, ...}) hashes the master seed and
// each path element through SplitMix64:
//   h = mix(master); for each x: h = mix(h ^ mix(x + 0x9E3779B97F4A7C15))
// Distinct paths give decorrelated engines.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace blockdiff {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

/// Well-known stream tags for derive_seed paths.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kRatio = 3;  // per-block noise ratio draws
inline constexpr std::uint64_t kMask = 4;   // per-block Bernoulli masks
inline constexpr std::uint64_t kEval = 5;
inline constexpr std::uint64_t kTheory = 6;
inline constexpr std::uint64_t kBootstrap = 7;
}  // namespace stream

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1]; never returns 0.
  double uniform_open0() { return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53; }

  /// Uniform integer in [0, n), rejection sampled.
  std::size_t below(std::size_t n);

  bool bernoulli(double p) { return uniform01() < p; }

  /// Standard normal via the Marsaglia polar method (no cached spare).
  double normal();

  /// Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 uses the
  /// Gamma(shape + 1) * U^(1/shape) boost.
  double gamma(double shape);

  /// Beta(a, b) as X / (X + Y) with X ~ Gamma(a), Y ~ Gamma(b).
  double beta(double a, double b);

 private:
  std::mt19937_64 engine_;
};

}  // namespace blockdiff
