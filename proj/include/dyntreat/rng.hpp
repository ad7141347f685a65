#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dyntreat {

/// Seeded random stream. Every stochastic routine takes one explicitly; nothing
/// in the library touches global random state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream derived from a master seed and a name, e.g.
  /// substream(seed, "eval", episode). Changing one consumer's draw count never
  /// perturbs another substream.
  static Rng substream(std::uint64_t master, std::string_view name, std::uint64_t index = 0);

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  double exponential(double rate);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// SplitMix64 finalizer, used for seed derivation and content hashing.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_string(std::string_view s);

}  // namespace dyntreat
