#pragma once

#include <cstdint>
#include <string_view>

#include "hybridlab/tensor.hpp"

namespace hybridlab {

/// Counter-based generator: the n-th draw is a pure function of (key, n), so
/// streams can be split and replayed without shared state.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  /// Independent stream derived from this key and a label.
  CounterRng fork(std::string_view label) const;
  CounterRng fork(std::uint64_t index) const;

  std::uint64_t next_u64() { return mix(key_ + (counter_++ + 1) * 0x9e3779b97f4a7c15ULL); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::int64_t below(std::int64_t n);
  double normal();

  std::uint64_t counter() const { return counter_; }

 private:
  CounterRng(std::uint64_t key, int) : key_(key) {}
  static std::uint64_t mix(std::uint64_t z);

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

Tensor randn(Shape shape, CounterRng& rng, double stddev = 1.0);
Tensor rand_uniform(Shape shape, CounterRng& rng, double lo, double hi);

}  // namespace hybridlab
