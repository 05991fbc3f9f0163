#pragma once

#include <cstdint>

#include "ueps/grid.hpp"

namespace ueps {

/// Counter-based generator: output i is a bijective mix of (key, i), so a
/// stream is reproducible from its seed alone and split() hands out
/// independent substreams without touching the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  /// Standard normal truncated to [-bound, bound] by rejection.
  double truncated_normal(double bound);

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

Rng seeded_rng(std::uint64_t seed);

/// Circularly-symmetric complex Gaussian entries with E|z|^2 = sigma^2.
ComplexGrid normal(Rng& rng, Shape shape, double sigma);

}  // namespace ueps
