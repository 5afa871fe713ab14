#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hybridlab/attention.hpp"
#include "hybridlab/nn.hpp"
#include "hybridlab/ssm.hpp"

namespace hybridlab {

enum class BlockKind { kAttn, kSwa, kMamba, kIntra };

std::string_view to_string(BlockKind k);
BlockKind parse_block_kind(std::string_view s);

enum class NormKind { kNone, kGroup };
enum class ScalarKind { kNone, kScale, kGate, kDiffLambda };
enum class FusionOp { kAdd, kDiff, kConcat };

std::string_view to_string(NormKind v);
std::string_view to_string(ScalarKind v);
std::string_view to_string(FusionOp v);
NormKind parse_norm_kind(std::string_view s);
ScalarKind parse_scalar_kind(std::string_view s);
FusionOp parse_fusion_op(std::string_view s);

/// Design point of an intra-layer hybrid block.
struct FusionSpec {
  NormKind norm = NormKind::kGroup;
  ScalarKind scalar = ScalarKind::kNone;
  FusionOp fusion = FusionOp::kDiff;
  int out_proj_count = 2;
  std::pair<int, int> dim_ratio{1, 1};  // (attention share, ssm share)

  void validate() const;
  double attn_share() const;
  double ssm_share() const;
  std::string label() const;

  friend bool operator==(const FusionSpec&, const FusionSpec&) = default;
};

/// Every legal combination of norm x scalar x (fusion, out_proj_count).
std::vector<FusionSpec> fusion_variant_matrix();

struct MoeConfig {
  std::int64_t n_experts = 8;
  std::int64_t top_k = 1;
  std::int64_t shared = 1;
  double bias_update_rate = 1e-3;
  /// Expert hidden width; 0 means d_ffn / (shared + top_k).
  std::int64_t d_expert = 0;

  void validate() const;
  std::int64_t expert_width(std::int64_t d_ffn) const;
};

struct BlockSpec {
  BlockKind kind = BlockKind::kMamba;
  std::optional<std::int64_t> window;
  std::optional<std::int64_t> sink;
  bool moe = false;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

enum class Positioning { kFront, kMiddle, kEnd, kCluster, kScatter, kSandwich };

std::string_view to_string(Positioning p);
Positioning parse_positioning(std::string_view s);

struct LayoutSpec {
  std::vector<BlockSpec> blocks;
  BlockKind special = BlockKind::kAttn;
  std::int64_t n_special = 0;
  std::int64_t n_mamba = 0;
  Positioning positioning = Positioning::kScatter;

  std::int64_t depth() const { return static_cast<std::int64_t>(blocks.size()); }
  std::int64_t count(BlockKind k) const;
  std::vector<std::int64_t> special_indices() const;
};

/// Architectural hyperparameters for one model scale.
struct ModelConfig {
  std::string name = "custom";
  std::int64_t vocab = 0;
  std::int64_t d_model = 0;
  std::int64_t d_ffn = 0;
  std::int64_t n_head = 0;
  std::int64_t n_kv = 0;
  std::int64_t d_head = 0;
  std::int64_t d_ssm = 0;
  std::int64_t d_head_ssm = 0;
  std::int64_t d_state = 0;
  std::int64_t n_conv = 4;
  std::int64_t n_groups = 1;
  std::int64_t chunk = 16;
  std::int64_t window = 512;
  std::int64_t sink = 64;
  double rope_base = kDefaultRopeBase;
  FusionSpec fusion;
  MoeConfig moe;

  void validate() const;
  bool has_attention() const { return n_head > 0 && d_head > 0; }
  bool has_ssm() const { return d_ssm > 0; }

  FfnConfig ffn() const { return FfnConfig{d_model, d_ffn}; }
  AttnConfig attn(const BlockSpec& spec) const;
  SsmConfig ssm() const;
  /// Attention branch of an intra-hybrid block (no output projection).
  AttnConfig intra_attn() const;
  /// SSM branch of an intra-hybrid block (no output projection).
  SsmConfig intra_ssm() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LayoutSpec& l);
LayoutSpec layout_from_json(const nlohmann::json& j);

struct Preset {
  ModelConfig model;
  LayoutSpec layout;
};

/// Named configurations: llama-{100m,350m,1b,3b}, mamba-{...}, swa-1b,
/// inter-1b, intra-1b and toy-{llama,swa,mamba,inter,intra}.
Preset preset(std::string_view name);
std::vector<std::string> preset_names();

/// Homogeneous base configurations.
ModelConfig llama_config(std::string_view size);
ModelConfig mamba_config(std::string_view size);
/// Attention and SSM dimensions of one scale merged for hybrid stacks.
ModelConfig hybrid_config(std::string_view size);

}  // namespace hybridlab
