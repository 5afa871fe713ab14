#pragma once

#include <cstdint>
#include <vector>

#include "hybridlab/config.hpp"
#include "hybridlab/nn.hpp"
#include "hybridlab/rng.hpp"
#include "hybridlab/tensor.hpp"

namespace hybridlab {

struct MoeWeights {
  Tensor router;                    // [d_model, n_experts]
  std::vector<FfnWeights> shared;   // `shared` always-on experts
  std::vector<FfnWeights> experts;  // routed experts
  FfnConfig expert_ffn;

  static MoeWeights init(std::int64_t d_model, std::int64_t d_ffn, const MoeConfig& cfg, CounterRng& rng);
  std::vector<Tensor*> tensors();
};

/// Selection-only balancing bias plus running token counts per expert.
struct RouterState {
  std::vector<double> expert_bias;
  std::vector<std::int64_t> load_counts;

  static RouterState zeros(std::int64_t n_experts);
};

struct Routing {
  std::vector<std::vector<std::int64_t>> selected;  // [L][top_k], best first
  std::vector<std::vector<double>> gates;           // unbiased sigmoid scores of `selected`
  std::vector<std::int64_t> loads;                  // tokens per expert in this batch
};

/// Sigmoid router; experts ranked by score + bias, ties to the lower index.
Routing route(const Tensor& tokens, const Tensor& router_weights, const RouterState& state, const MoeConfig& cfg);

/// shared(x) + sum over selected experts of gate * expert(x), per token.
/// The routing used is written to `routing_out` when given.
Tensor moe_forward(const Tensor& x, const MoeWeights& w, const RouterState& state, const MoeConfig& cfg,
                   Routing* routing_out = nullptr);

/// bias_e += rate * sign(mean_load - load_e); also accumulates load counts.
RouterState update_balance(const RouterState& state, const std::vector<std::int64_t>& batch_loads,
                           const MoeConfig& cfg);

struct BalanceSimulation {
  std::vector<std::vector<std::int64_t>> loads;  // per step, per expert
  RouterState final_state;
  /// Largest expert share of the routed slots of step `step`.
  double max_load_fraction(std::int64_t step) const;
  /// Largest expert share over the last `window` steps combined.
  double tail_max_fraction(std::int64_t window) const;
};

/// Routes fresh Gaussian tokens through a fixed random router. Tokens carry a
/// constant unit feature whose router row rises linearly to `skew` across
/// experts, so routing starts out biased toward the last expert. The
/// balancing bias is updated after every step.
BalanceSimulation simulate_balancing(const MoeConfig& cfg, std::int64_t d_model, std::int64_t tokens_per_step,
                                     std::int64_t steps, double skew, std::uint64_t seed);

}  // namespace hybridlab
