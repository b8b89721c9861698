#pragma once

#include <cstdint>

namespace fda {

/// Counter-based generator: the i-th draw of stream s under seed k is a pure
/// function of (k, s, i), so results do not depend on evaluation order.
/// Distributions are computed here rather than through <random> so that the
/// streams are identical across standard library implementations.
class CounterRng {
 public:
  explicit CounterRng(uint64_t seed, uint64_t stream = 0);

  uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();
  /// Uniform integer in [0, n). n must be > 0.
  uint64_t below(uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream keyed by `id`.
  CounterRng split(uint64_t id) const;

  uint64_t counter() const { return counter_; }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
};

uint64_t splitmix64(uint64_t x);

}  // namespace fda
