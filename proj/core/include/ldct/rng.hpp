#pragma once

#include <cstdint>
#include <random>

namespace ldct {

/// Deterministic random source. The engine is the standard-specified
/// mt19937_64; all variate transforms are implemented here rather than
/// through std distributions, so identical seeds yield identical streams
/// on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1), 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform index in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n) {
    auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  /// Poisson variate. Sequential inversion below mean 30, Hormann's
  /// transformed-rejection (PTRS) above; exact for mean = 0.
  long long poisson(double mean);

 private:
  std::mt19937_64 engine_;
};

/// Splitmix64-style stream splitting: folds up to three stream labels into
/// a master seed. Used to give every (patient, slice, purpose) its own
/// independent deterministic stream.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace ldct
