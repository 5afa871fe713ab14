#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "hybridlab/rng.hpp"
#include "hybridlab/tensor.hpp"

namespace hybridlab {

struct SsmConfig {
  std::int64_t d_model = 0;
  std::int64_t d_ssm = 0;  // inner width
  std::int64_t d_state = 0;
  std::int64_t d_head_ssm = 0;
  std::int64_t n_conv = 4;
  std::int64_t n_groups = 1;
  std::int64_t chunk = 16;

  void validate() const;
  std::int64_t n_heads() const { return d_ssm / d_head_ssm; }
  std::int64_t conv_channels() const { return d_ssm + 2 * n_groups * d_state; }
  /// in_proj output width: z, x, B, C, dt.
  std::int64_t in_proj_width() const { return 2 * d_ssm + 2 * n_groups * d_state + n_heads(); }
};

struct SsmParams {
  Tensor in_proj;   // [d_model, in_proj_width]
  Tensor conv_w;    // [conv_channels, n_conv]; column n_conv-1 multiplies the current input
  Tensor conv_b;    // [conv_channels]
  Tensor a_log;     // [H]
  Tensor d_skip;    // [H]
  Tensor dt_bias;   // [H]
  Tensor norm_w;    // [d_ssm]
  Tensor out_proj;  // [d_ssm, d_model]; undefined inside a fused branch

  static SsmParams init(const SsmConfig& cfg, CounterRng& rng, bool with_output = true);
  std::vector<Tensor*> tensors();
};

/// Causal depthwise convolution of u[L, Ch] with w[Ch, K] plus bias.
Tensor causal_conv1d(const Tensor& u, const Tensor& w, const Tensor& b);

/// Selective recurrence, per head h in group g = h / (H/G):
///   a_t = exp(-dt_t[h] * rate[h]);  h_t = a_t h_{t-1} + dt_t[h] x_t[h] (x) B_t[g]
///   y_t[h] = h_t C_t[g] + D[h] x_t[h]
/// x[L,H,P], dt[L,H], rate[H], b/c[L,G,N], d[H] -> y[L,H,P]. The forward pass
/// runs chunk by chunk; chunk states are carried with a Blelloch scan.
Tensor selective_scan(const Tensor& x, const Tensor& dt, const Tensor& rate, const Tensor& b, const Tensor& c,
                      const Tensor& d, std::int64_t chunk);

/// Plain step-by-step evaluation of the same recurrence (inference only).
Tensor selective_scan_sequential(const Tensor& x, const Tensor& dt, const Tensor& rate, const Tensor& b,
                                 const Tensor& c, const Tensor& d);

/// Element of the linear-recurrence monoid: state S after decay a.
struct DecayState {
  double decay = 1.0;
  std::vector<double> state;
};

/// (a1,S1) then (a2,S2) -> (a1 a2, a2 S1 + S2).
DecayState combine(const DecayState& first, const DecayState& second);

/// Work-efficient (up-sweep/down-sweep) exclusive scan under `combine`.
/// Entry i of the result is the fold of items[0..i); entry 0 is the identity
/// with a zero state of `width`.
std::vector<DecayState> blelloch_exclusive_scan(std::span<const DecayState> items, std::size_t width);

struct SsmState {
  std::vector<double> conv;  // [n_conv, conv_channels], oldest row first
  std::vector<double> h;     // [H, P, N]
  std::int64_t position = 0;

  static SsmState zeros(const SsmConfig& cfg);
  std::int64_t element_count() const { return static_cast<std::int64_t>(conv.size() + h.size()); }
};

/// Pre-projection block output [L, d_ssm] (after the gated norm).
Tensor ssm_inner_forward(const Tensor& x, const SsmConfig& cfg, const SsmParams& p, std::int64_t chunk);
/// x[L, d_model] -> [L, d_model].
Tensor ssm_scan(const Tensor& x, const SsmConfig& cfg, const SsmParams& p, std::int64_t chunk);
Tensor ssm_forward(const Tensor& x, const SsmConfig& cfg, const SsmParams& p);

/// One recurrent step for x_t[1, d_model]; returns the pre-projection output [1, d_ssm].
Tensor ssm_inner_step(SsmState& state, const Tensor& x_t, const SsmConfig& cfg, const SsmParams& p);
/// One recurrent step returning [1, d_model].
Tensor ssm_step(SsmState& state, const Tensor& x_t, const SsmConfig& cfg, const SsmParams& p);

}  // namespace hybridlab
