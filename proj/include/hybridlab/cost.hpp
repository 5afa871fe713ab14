#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hybridlab/config.hpp"

namespace hybridlab {

inline constexpr std::int64_t kCacheBytesPerElement = 2;  // bfloat16
inline constexpr double kMiB = 1024.0 * 1024.0;

struct BlockParams {
  std::int64_t mixer = 0;      // attention / SSM / fused sublayer
  std::int64_t ffn = 0;        // dense FFN or every MoE expert plus router
  std::int64_t ffn_active = 0; // weights a single token touches
  std::int64_t norms = 0;

  std::int64_t total() const { return mixer + ffn + norms; }
  std::int64_t active() const { return mixer + ffn_active + norms; }
};

/// Weight count of a block exactly as build_block instantiates it.
BlockParams block_params(const BlockSpec& spec, const ModelConfig& cfg);

/// Closed-form mixer parameter counts: attention 2 d^2 + 2 d d_head N_kv;
/// SSM d (2 d_ssm + 2 d_state + H) + d_state (N_conv + d) + 2 H.
std::int64_t attention_params_closed_form(const ModelConfig& cfg);
std::int64_t mamba_params_closed_form(const ModelConfig& cfg);
std::int64_t block_mixer_closed_form(const BlockSpec& spec, const ModelConfig& cfg);

std::int64_t block_cache_bytes(const BlockSpec& spec, const ModelConfig& cfg, std::int64_t l_ctx);

/// Sequence-dependent training FLOPs per sample beyond 6 x parameters.
double block_flops_extra(const BlockSpec& spec, const ModelConfig& cfg, std::int64_t l_ctx);
/// 6 L (active block params) + extra.
double block_flops_per_sample(const BlockSpec& spec, const ModelConfig& cfg, std::int64_t l_ctx);

/// Forward operations for one decoding step with `n_visible` attended
/// positions; excludes embedding and output head.
double block_decode_ops(const BlockSpec& spec, const ModelConfig& cfg, std::int64_t n_visible);

struct CostReport {
  std::string layout_id;
  std::int64_t l_ctx = 0;
  double tokens = 0.0;
  double flops_per_sample = 0.0;
  double train_flops = 0.0;
  std::int64_t params_nonemb = 0;
  std::int64_t params_emb = 0;
  std::int64_t params_head = 0;
  std::vector<std::int64_t> params_per_block;
  std::vector<std::int64_t> closed_form_mixer_per_block;
  std::int64_t cache_bytes = 0;
  std::int64_t activated_params = 0;
};

/// Whole-network accounting. Non-embedding parameters are block weights
/// plus the final norm; embedding and output head are reported apart.
CostReport cost_report(const LayoutSpec& layout, const ModelConfig& cfg, std::int64_t l_ctx, double tokens,
                       std::string layout_id = "");

/// 6 N_active tokens + per-sample extras x tokens / L.
double train_flops_total(const LayoutSpec& layout, const ModelConfig& cfg, std::int64_t l_ctx, double tokens);

std::vector<std::string> cost_csv_columns();
void write_cost_csv(std::ostream& os, const std::vector<CostReport>& rows, const std::string& config_json);
/// 3-significant-figure human table.
void write_cost_table(std::ostream& os, const std::vector<CostReport>& rows);

}  // namespace hybridlab
