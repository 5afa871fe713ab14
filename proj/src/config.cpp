#include "hybridlab/config.hpp"

#include <array>
#include <cmath>

#include "hybridlab/layout.hpp"

namespace hybridlab {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table, const char* what) {
  for (const auto& [name, v] : table) {
    if (name == s) return v;
  }
  std::string names;
  for (const auto& [name, v] : table) names += (names.empty() ? "" : ", ") + std::string(name);
  throw ContractError(std::string("unknown ") + what + " '" + std::string(s) + "' (expected one of: " + names + ")");
}

template <typename E, std::size_t N>
std::string_view enum_name(E v, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, e] : table) {
    if (e == v) return name;
  }
  return "?";
}

constexpr std::array<std::pair<std::string_view, BlockKind>, 4> kBlockKinds{
    {{"attn", BlockKind::kAttn}, {"swa", BlockKind::kSwa}, {"mamba", BlockKind::kMamba}, {"intra", BlockKind::kIntra}}};
constexpr std::array<std::pair<std::string_view, NormKind>, 2> kNorms{
    {{"none", NormKind::kNone}, {"group", NormKind::kGroup}}};
constexpr std::array<std::pair<std::string_view, ScalarKind>, 4> kScalars{{{"none", ScalarKind::kNone},
                                                                          {"scale", ScalarKind::kScale},
                                                                          {"gate", ScalarKind::kGate},
                                                                          {"diff_lambda", ScalarKind::kDiffLambda}}};
constexpr std::array<std::pair<std::string_view, FusionOp>, 3> kFusions{
    {{"add", FusionOp::kAdd}, {"diff", FusionOp::kDiff}, {"concat", FusionOp::kConcat}}};
constexpr std::array<std::pair<std::string_view, Positioning>, 6> kPositions{{{"front", Positioning::kFront},
                                                                             {"middle", Positioning::kMiddle},
                                                                             {"end", Positioning::kEnd},
                                                                             {"cluster", Positioning::kCluster},
                                                                             {"scatter", Positioning::kScatter},
                                                                             {"sandwich", Positioning::kSandwich}}};

constexpr std::int64_t kLlamaVocab = 128256;

}  // namespace

std::string_view to_string(BlockKind k) { return enum_name(k, kBlockKinds); }
BlockKind parse_block_kind(std::string_view s) { return parse_enum(s, kBlockKinds, "block kind"); }
std::string_view to_string(NormKind v) { return enum_name(v, kNorms); }
std::string_view to_string(ScalarKind v) { return enum_name(v, kScalars); }
std::string_view to_string(FusionOp v) { return enum_name(v, kFusions); }
NormKind parse_norm_kind(std::string_view s) { return parse_enum(s, kNorms, "norm"); }
ScalarKind parse_scalar_kind(std::string_view s) { return parse_enum(s, kScalars, "scalar"); }
FusionOp parse_fusion_op(std::string_view s) { return parse_enum(s, kFusions, "fusion"); }
std::string_view to_string(Positioning p) { return enum_name(p, kPositions); }
Positioning parse_positioning(std::string_view s) { return parse_enum(s, kPositions, "positioning"); }

void FusionSpec::validate() const {
  if (out_proj_count != 1 && out_proj_count != 2) throw ContractError("FusionSpec: out_proj_count must be 1 or 2");
  if (fusion == FusionOp::kConcat && out_proj_count != 1) {
    throw ContractError("FusionSpec: concat fusion requires a single output projection");
  }
  if (dim_ratio.first <= 0 || dim_ratio.second <= 0) throw ContractError("FusionSpec: dim_ratio shares must be > 0");
}

double FusionSpec::attn_share() const {
  return static_cast<double>(dim_ratio.first) / static_cast<double>(dim_ratio.first + dim_ratio.second);
}

double FusionSpec::ssm_share() const { return 1.0 - attn_share(); }

std::string FusionSpec::label() const {
  return std::string(to_string(norm)) + "/" + std::string(to_string(scalar)) + "/" + std::string(to_string(fusion)) +
         "/" + std::to_string(out_proj_count);
}

std::vector<FusionSpec> fusion_variant_matrix() {
  std::vector<FusionSpec> out;
  for (auto [_, norm] : kNorms) {
    for (auto [__, scalar] : kScalars) {
      for (auto [___, fusion] : kFusions) {
        for (int outs : {1, 2}) {
          FusionSpec f{norm, scalar, fusion, outs, {1, 1}};
          if (fusion == FusionOp::kConcat && outs == 2) continue;
          out.push_back(f);
        }
      }
    }
  }
  return out;
}

void MoeConfig::validate() const {
  if (n_experts < 1 || top_k < 1 || top_k > n_experts) throw ContractError("MoeConfig: need 1 <= top_k <= n_experts");
  if (shared < 0) throw ContractError("MoeConfig: shared must be >= 0");
  if (!(bias_update_rate >= 0.0)) throw ContractError("MoeConfig: bias_update_rate must be >= 0");
  if (d_expert < 0) throw ContractError("MoeConfig: d_expert must be >= 0");
}

std::int64_t MoeConfig::expert_width(std::int64_t d_ffn) const {
  return d_expert > 0 ? d_expert : d_ffn / (shared + top_k);
}

std::int64_t LayoutSpec::count(BlockKind k) const {
  std::int64_t n = 0;
  for (const auto& b : blocks) n += b.kind == k ? 1 : 0;
  return n;
}

std::vector<std::int64_t> LayoutSpec::special_indices() const {
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < depth(); ++i) {
    if (blocks[i].kind != BlockKind::kMamba) out.push_back(i);
  }
  return out;
}

void ModelConfig::validate() const {
  if (vocab <= 0 || d_model <= 0) throw ContractError("ModelConfig: vocab and d_model must be positive");
  ffn().validate();
  if (has_attention()) {
    attn(BlockSpec{BlockKind::kAttn}).validate();
    if (window < 1 || sink < 0) throw ContractError("ModelConfig: window must be >= 1 and sink >= 0");
  }
  if (has_ssm()) ssm().validate();
  fusion.validate();
  moe.validate();
}

AttnConfig ModelConfig::attn(const BlockSpec& spec) const {
  if (!has_attention()) throw ContractError("ModelConfig '" + name + "' has no attention dimensions");
  AttnConfig a{d_model, n_head, n_kv, d_head, d_head, std::nullopt, rope_base};
  if (spec.kind == BlockKind::kSwa) a.sliding = SlidingWindow{spec.window.value_or(window), spec.sink.value_or(sink)};
  return a;
}

SsmConfig ModelConfig::ssm() const {
  if (!has_ssm()) throw ContractError("ModelConfig '" + name + "' has no SSM dimensions");
  return SsmConfig{d_model, d_ssm, d_state, d_head_ssm, n_conv, n_groups, chunk};
}

AttnConfig ModelConfig::intra_attn() const {
  AttnConfig a = attn(BlockSpec{BlockKind::kAttn});
  const auto half_pairs = std::llround(fusion.attn_share() * static_cast<double>(d_head) / 2.0);
  a.d_qk = std::max<std::int64_t>(2, 2 * half_pairs);
  return a;
}

SsmConfig ModelConfig::intra_ssm() const {
  SsmConfig s = ssm();
  const auto heads = std::llround(fusion.ssm_share() * static_cast<double>(d_ssm) / static_cast<double>(d_head_ssm));
  s.d_ssm = std::max<std::int64_t>(1, heads) * d_head_ssm;
  if (s.n_heads() % s.n_groups != 0) s.n_groups = 1;
  return s;
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{
      {"name", c.name},
      {"vocab", c.vocab},
      {"d_model", c.d_model},
      {"d_ffn", c.d_ffn},
      {"n_head", c.n_head},
      {"n_kv", c.n_kv},
      {"d_head", c.d_head},
      {"d_ssm", c.d_ssm},
      {"d_head_ssm", c.d_head_ssm},
      {"d_state", c.d_state},
      {"n_conv", c.n_conv},
      {"n_groups", c.n_groups},
      {"chunk", c.chunk},
      {"window", c.window},
      {"sink", c.sink},
      {"rope_base", c.rope_base},
      {"fusion",
       {{"norm", to_string(c.fusion.norm)},
        {"scalar", to_string(c.fusion.scalar)},
        {"fusion", to_string(c.fusion.fusion)},
        {"out_proj_count", c.fusion.out_proj_count},
        {"dim_ratio", {c.fusion.dim_ratio.first, c.fusion.dim_ratio.second}}}},
      {"moe",
       {{"n_experts", c.moe.n_experts},
        {"top_k", c.moe.top_k},
        {"shared", c.moe.shared},
        {"bias_update_rate", c.moe.bias_update_rate},
        {"d_expert", c.moe.d_expert}}},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.name = j.at("name").get<std::string>();
  c.vocab = j.at("vocab").get<std::int64_t>();
  c.d_model = j.at("d_model").get<std::int64_t>();
  c.d_ffn = j.at("d_ffn").get<std::int64_t>();
  c.n_head = j.at("n_head").get<std::int64_t>();
  c.n_kv = j.at("n_kv").get<std::int64_t>();
  c.d_head = j.at("d_head").get<std::int64_t>();
  c.d_ssm = j.at("d_ssm").get<std::int64_t>();
  c.d_head_ssm = j.at("d_head_ssm").get<std::int64_t>();
  c.d_state = j.at("d_state").get<std::int64_t>();
  c.n_conv = j.at("n_conv").get<std::int64_t>();
  c.n_groups = j.at("n_groups").get<std::int64_t>();
  c.chunk = j.at("chunk").get<std::int64_t>();
  c.window = j.at("window").get<std::int64_t>();
  c.sink = j.at("sink").get<std::int64_t>();
  c.rope_base = j.at("rope_base").get<double>();
  const auto& f = j.at("fusion");
  c.fusion.norm = parse_norm_kind(f.at("norm").get<std::string>());
  c.fusion.scalar = parse_scalar_kind(f.at("scalar").get<std::string>());
  c.fusion.fusion = parse_fusion_op(f.at("fusion").get<std::string>());
  c.fusion.out_proj_count = f.at("out_proj_count").get<int>();
  c.fusion.dim_ratio = {f.at("dim_ratio").at(0).get<int>(), f.at("dim_ratio").at(1).get<int>()};
  const auto& m = j.at("moe");
  c.moe.n_experts = m.at("n_experts").get<std::int64_t>();
  c.moe.top_k = m.at("top_k").get<std::int64_t>();
  c.moe.shared = m.at("shared").get<std::int64_t>();
  c.moe.bias_update_rate = m.at("bias_update_rate").get<double>();
  c.moe.d_expert = m.at("d_expert").get<std::int64_t>();
  c.validate();
  return c;
}

nlohmann::json to_json(const LayoutSpec& l) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : l.blocks) {
    nlohmann::json e{{"kind", to_string(b.kind)}};
    if (b.window) e["window"] = *b.window;
    if (b.sink) e["sink"] = *b.sink;
    if (b.moe) e["ffn"] = "moe";
    blocks.push_back(e);
  }
  return nlohmann::json{{"special", to_string(l.special)},
                        {"n_special", l.n_special},
                        {"n_mamba", l.n_mamba},
                        {"positioning", to_string(l.positioning)},
                        {"blocks", blocks}};
}

LayoutSpec layout_from_json(const nlohmann::json& j) {
  LayoutSpec l;
  l.special = parse_block_kind(j.at("special").get<std::string>());
  l.n_special = j.at("n_special").get<std::int64_t>();
  l.n_mamba = j.at("n_mamba").get<std::int64_t>();
  l.positioning = parse_positioning(j.at("positioning").get<std::string>());
  for (const auto& e : j.at("blocks")) {
    BlockSpec b;
    b.kind = parse_block_kind(e.at("kind").get<std::string>());
    if (e.contains("window")) b.window = e["window"].get<std::int64_t>();
    if (e.contains("sink")) b.sink = e["sink"].get<std::int64_t>();
    b.moe = e.value("ffn", std::string("dense")) == "moe";
    l.blocks.push_back(b);
  }
  return l;
}

ModelConfig llama_config(std::string_view size) {
  ModelConfig c;
  c.vocab = kLlamaVocab;
  c.d_head = 64;
  if (size == "100m") {
    c.d_model = 1024, c.d_ffn = 3072, c.n_head = 16, c.n_kv = 4;
  } else if (size == "350m") {
    c.d_model = 1536, c.d_ffn = 4096, c.n_head = 24, c.n_kv = 8;
  } else if (size == "1b") {
    c.d_model = 2048, c.d_ffn = 8192, c.n_head = 32, c.n_kv = 8;
  } else if (size == "3b") {
    c.d_model = 3072, c.d_ffn = 8192, c.n_head = 32, c.n_kv = 8, c.d_head = 96;
  } else {
    throw ContractError("unknown model size '" + std::string(size) + "'");
  }
  c.name = "llama-" + std::string(size);
  return c;
}

ModelConfig mamba_config(std::string_view size) {
  ModelConfig c;
  c.vocab = kLlamaVocab;
  c.d_head_ssm = 128;
  c.d_state = 128;
  c.n_conv = 4;
  if (size == "100m") {
    c.d_model = 1024, c.d_ffn = 3072, c.d_ssm = 2048;
  } else if (size == "350m") {
    c.d_model = 1536, c.d_ffn = 4096, c.d_ssm = 3072;
  } else if (size == "1b") {
    c.d_model = 2048, c.d_ffn = 8192, c.d_ssm = 4096;
  } else if (size == "3b") {
    c.d_model = 3072, c.d_ffn = 8192, c.d_ssm = 6144, c.d_head_ssm = 192, c.d_state = 256;
  } else {
    throw ContractError("unknown model size '" + std::string(size) + "'");
  }
  c.name = "mamba-" + std::string(size);
  return c;
}

ModelConfig hybrid_config(std::string_view size) {
  ModelConfig c = llama_config(size);
  const ModelConfig m = mamba_config(size);
  c.d_ssm = m.d_ssm;
  c.d_head_ssm = m.d_head_ssm;
  c.d_state = m.d_state;
  c.n_conv = m.n_conv;
  c.name = "hybrid-" + std::string(size);
  return c;
}

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.vocab = 32;
  c.d_model = 32;
  c.d_ffn = 64;
  c.n_head = 4;
  c.n_kv = 2;
  c.d_head = 8;
  c.d_ssm = 64;
  c.d_head_ssm = 16;
  c.d_state = 8;
  c.n_conv = 4;
  c.chunk = 16;
  c.window = 16;
  c.sink = 4;
  c.rope_base = 10000.0;
  return c;
}

LayoutSpec uniform_layout(BlockKind kind, std::int64_t depth) {
  if (kind == BlockKind::kMamba) return plan_layout_counts(0, depth, BlockKind::kAttn, Positioning::kScatter);
  return plan_layout_counts(depth, 0, kind, Positioning::kScatter);
}

// `n_global` full-attention blocks scattered among sliding-window blocks.
LayoutSpec swa_layout(std::int64_t n_global, std::int64_t n_swa) {
  LayoutSpec l = plan_layout_counts(n_global, n_swa, BlockKind::kAttn, Positioning::kScatter);
  for (auto& b : l.blocks) {
    if (b.kind == BlockKind::kMamba) b.kind = BlockKind::kSwa;
  }
  l.n_mamba = 0;
  return l;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"llama-100m", "llama-350m", "llama-1b",  "llama-3b",  "mamba-100m", "mamba-350m", "mamba-1b",
          "mamba-3b",   "swa-1b",     "inter-1b",  "intra-1b",  "toy-llama",  "toy-swa",    "toy-mamba",
          "toy-inter",  "toy-intra"};
}

Preset preset(std::string_view name) {
  const std::string n(name);
  static constexpr std::array<std::pair<std::string_view, std::int64_t>, 4> kLlamaDepth{
      {{"100m", 8}, {"350m", 14}, {"1b", 16}, {"3b", 28}}};
  static constexpr std::array<std::pair<std::string_view, std::int64_t>, 4> kMambaDepth{
      {{"100m", 6}, {"350m", 11}, {"1b", 13}, {"3b", 21}}};
  Preset p;
  if (n.rfind("llama-", 0) == 0) {
    const std::string size = n.substr(6);
    p.model = llama_config(size);
    p.layout = uniform_layout(BlockKind::kAttn, parse_enum(size, kLlamaDepth, "llama size"));
  } else if (n.rfind("mamba-", 0) == 0) {
    const std::string size = n.substr(6);
    p.model = mamba_config(size);
    p.layout = uniform_layout(BlockKind::kMamba, parse_enum(size, kMambaDepth, "mamba size"));
  } else if (n == "swa-1b") {
    p.model = llama_config("1b");
    p.layout = swa_layout(3, 13);
  } else if (n == "inter-1b") {
    p.model = hybrid_config("1b");
    p.layout = plan_layout_counts(2, 11, BlockKind::kAttn, Positioning::kScatter);
  } else if (n == "intra-1b") {
    p.model = hybrid_config("1b");
    p.layout = plan_layout_counts(2, 11, BlockKind::kIntra, Positioning::kScatter);
  } else if (n == "toy-llama") {
    p.model = toy_config();
    p.layout = uniform_layout(BlockKind::kAttn, 2);
  } else if (n == "toy-swa") {
    p.model = toy_config();
    p.layout = swa_layout(1, 2);
  } else if (n == "toy-mamba") {
    p.model = toy_config();
    p.layout = uniform_layout(BlockKind::kMamba, 2);
  } else if (n == "toy-inter") {
    p.model = toy_config();
    p.layout = plan_layout_counts(1, 2, BlockKind::kAttn, Positioning::kScatter);
  } else if (n == "toy-intra") {
    p.model = toy_config();
    p.layout = uniform_layout(BlockKind::kIntra, 2);
  } else {
    std::string names;
    for (const auto& s : preset_names()) names += (names.empty() ? "" : ", ") + s;
    throw ContractError("unknown preset '" + n + "' (expected one of: " + names + ")");
  }
  p.model.name = n;
  p.model.validate();
  return p;
}

}  // namespace hybridlab
