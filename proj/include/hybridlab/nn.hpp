#pragma once

#include <cstdint>
#include <span>

#include "hybridlab/rng.hpp"
#include "hybridlab/tensor.hpp"

namespace hybridlab {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kDefaultRopeBase = 500000.0;

struct FfnConfig {
  std::int64_t d_model = 0;
  std::int64_t d_ffn = 0;

  void validate() const;
};

struct FfnWeights {
  Tensor gate;  // [d_model, d_ffn]
  Tensor up;    // [d_model, d_ffn]
  Tensor down;  // [d_ffn, d_model]

  static FfnWeights init(const FfnConfig& cfg, CounterRng& rng);
};

struct RopeConfig {
  std::int64_t head_dim = 0;
  double base_frequency = kDefaultRopeBase;

  void validate() const;
};

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps = kNormEps);

/// x[..., n_head, d_head] standardized per (position, head), then scaled by
/// weight[n_head, d_head].
Tensor group_norm_per_head(const Tensor& x, const Tensor& weight, double eps = kNormEps);

/// down(silu(x gate) * (x up)).
Tensor siglu_ffn(const Tensor& x, const FfnConfig& cfg, const FfnWeights& w);

/// Rotates consecutive pairs (2i, 2i+1) of the last axis by
/// pos * base^(-2i/head_dim). Input is [L, N, d] or [B, L, N, d]; position of
/// sequence row l is start_pos + l.
Tensor apply_rope(const Tensor& x, std::int64_t start_pos, const RopeConfig& cfg);

/// Same rotation with an explicit absolute position per row of x[n, N, d].
Tensor apply_rope_at(const Tensor& x, std::span<const std::int64_t> positions, const RopeConfig& cfg);

/// Rows of `table` selected by token ids.
Tensor embed(const Tensor& table, std::span<const std::int64_t> tokens);

}  // namespace hybridlab
