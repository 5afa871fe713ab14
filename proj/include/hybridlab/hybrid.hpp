#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hybridlab/attention.hpp"
#include "hybridlab/config.hpp"
#include "hybridlab/moe.hpp"
#include "hybridlab/nn.hpp"
#include "hybridlab/ssm.hpp"

namespace hybridlab {

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

/// Weights of an intra-layer hybrid block: a reduced attention branch and a
/// reduced SSM branch, fused head-wise. Norm and scalar tensors stay
/// undefined unless the block's FusionSpec uses them.
struct IntraWeights {
  AttnWeights attn;  // no output projection
  SsmParams ssm;     // no output projection
  Tensor gn_attn;    // [H, d_head]
  Tensor gn_ssm;     // [H_ssm, d_head_ssm]
  Tensor scale_attn;  // [1]
  Tensor scale_ssm;   // [1]
  Tensor gate_attn;   // [H]
  Tensor gate_ssm;    // [H_ssm]
  Tensor lambda_q1, lambda_k1, lambda_q2, lambda_k2;  // [d_head]
  double lambda_init = 0.8;
  Tensor wo;       // single projection over the fused width
  Tensor wo_attn;  // two projections: [H*d_head, d_model]
  Tensor wo_ssm;   //                  [d_ssm_branch, d_model]

  static IntraWeights init(const ModelConfig& cfg, CounterRng& rng);
  NamedTensors named(const std::string& prefix);
};

/// Width entering the output projection(s) for each branch.
std::int64_t intra_attn_width(const ModelConfig& cfg);
std::int64_t intra_ssm_width(const ModelConfig& cfg);

/// Branch outputs after per-branch norm and scalar: a[L,H,d_head], m[L,Hs,d_head_ssm].
std::pair<Tensor, Tensor> condition_branches(const Tensor& a, const Tensor& m, const FusionSpec& spec,
                                             const IntraWeights& w);

/// Single-projection fused tensor [L, width] (a+m, a-m or [a, m]) from
/// conditioned branches; only meaningful when out_proj_count == 1.
Tensor fuse_pre_projection(const Tensor& a, const Tensor& m, const FusionSpec& spec);

/// Conditioned branches -> [L, d_model].
Tensor fuse_and_project(const Tensor& a, const Tensor& m, const FusionSpec& spec, const IntraWeights& w);

/// Full intra-hybrid mixer on x[L, d_model].
Tensor intra_hybrid_forward(const Tensor& x, const ModelConfig& cfg, const IntraWeights& w);

struct IntraCache {
  FullKvCache kv;
  SsmState ssm;
};

using LayerCache = std::variant<FullKvCache, RollingKvCache, SsmState, IntraCache>;

std::int64_t cache_element_count(const LayerCache& c);

/// Pre-norm mixer sublayer plus pre-norm FFN (or MoE) sublayer, both residual.
struct Layer {
  BlockSpec spec;
  ModelConfig cfg;
  Tensor norm_mix;  // [d_model]
  Tensor norm_ffn;  // [d_model]
  std::optional<AttnWeights> attn;
  std::optional<SsmParams> ssm;
  std::optional<IntraWeights> intra;
  std::optional<FfnWeights> ffn;
  std::optional<MoeWeights> moe;
  RouterState router;

  Tensor mixer(const Tensor& h) const;
  /// x[L, d_model] -> [L, d_model]. MoE routing is reported when requested.
  Tensor forward(const Tensor& x, Routing* routing = nullptr) const;
  LayerCache make_cache() const;
  /// x_t[1, d_model] at the cache's next position.
  Tensor step(const Tensor& x_t, std::int64_t pos, LayerCache& cache) const;
  bool uses_rope() const { return attn.has_value() || intra.has_value(); }
  NamedTensors named(const std::string& prefix);
  std::int64_t parameter_count() const;
};

Layer build_block(const BlockSpec& spec, const ModelConfig& base, CounterRng& rng);

}  // namespace hybridlab
