#include "hybridlab/rng.hpp"

#include <cmath>
#include <numbers>

namespace hybridlab {

std::uint64_t CounterRng::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

CounterRng CounterRng::fork(std::string_view label) const {
  // FNV-1a over the label, folded into the key
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return CounterRng(mix(key_ ^ mix(h)), 0);
}

CounterRng CounterRng::fork(std::uint64_t index) const {
  return CounterRng(mix(key_ ^ mix(index + 0x243f6a8885a308d3ULL)), 0);
}

std::int64_t CounterRng::below(std::int64_t n) {
  if (n <= 0) throw ContractError("CounterRng::below: n must be positive");
  const auto un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % un);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return static_cast<std::int64_t>(v % un);
}

double CounterRng::normal() {
  // Box-Muller, one draw per pair of uniforms
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor randn(Shape shape, CounterRng& rng, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = stddev * rng.normal();
  return t;
}

Tensor rand_uniform(Shape shape, CounterRng& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace hybridlab
