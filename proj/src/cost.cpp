#include "hybridlab/cost.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>

#include "hybridlab/csv.hpp"
#include "hybridlab/hybrid.hpp"

namespace hybridlab {

namespace {

std::int64_t ssm_weight_count(const SsmConfig& s, bool with_output) {
  const std::int64_t ch = s.conv_channels();
  std::int64_t n = s.d_model * s.in_proj_width() + ch * s.n_conv + ch + 3 * s.n_heads() + s.d_ssm;
  if (with_output) n += s.d_ssm * s.d_model;
  return n;
}

std::int64_t ssm_state_elements(const SsmConfig& s) { return s.d_ssm * s.d_state + s.n_conv * s.conv_channels(); }

double ssm_scan_ops_per_token(const SsmConfig& s) {
  const auto d = static_cast<double>(s.d_ssm);
  return 9.0 * d * static_cast<double>(s.d_state) + 2.0 * d;
}

// Multiply-adds per (query, key) pair: scores over d_qk plus mixing over d_head.
double attention_pair_width(const AttnConfig& a) {
  return static_cast<double>(a.n_head * a.d_qk + a.n_head * a.d_head);
}

std::int64_t intra_mixer_params(const ModelConfig& cfg) {
  const AttnConfig a = cfg.intra_attn();
  const SsmConfig s = cfg.intra_ssm();
  std::int64_t n = cfg.d_model * (a.n_head * a.d_qk + a.n_kv * a.d_qk + a.n_kv * a.d_head);
  n += ssm_weight_count(s, false);
  if (cfg.fusion.norm == NormKind::kGroup) n += a.n_head * a.d_head + s.d_ssm;
  switch (cfg.fusion.scalar) {
    case ScalarKind::kNone:
      break;
    case ScalarKind::kScale:
      n += 2;
      break;
    case ScalarKind::kGate:
      n += a.n_head + s.n_heads();
      break;
    case ScalarKind::kDiffLambda:
      n += 4 * a.d_head;
      break;
  }
  const std::int64_t wa = intra_attn_width(cfg);
  const std::int64_t wm = intra_ssm_width(cfg);
  if (cfg.fusion.out_proj_count == 2) {
    n += (wa + wm) * cfg.d_model;
  } else {
    n += (cfg.fusion.fusion == FusionOp::kConcat ? wa + wm : wa) * cfg.d_model;
  }
  return n;
}

}  // namespace

BlockParams block_params(const BlockSpec& spec, const ModelConfig& cfg) {
  BlockParams p;
  p.norms = 2 * cfg.d_model;
  switch (spec.kind) {
    case BlockKind::kAttn:
    case BlockKind::kSwa: {
      const AttnConfig a = cfg.attn(spec);
      p.mixer = cfg.d_model * (a.n_head * a.d_qk + a.n_kv * a.d_qk + a.n_kv * a.d_head) + a.n_head * a.d_head * cfg.d_model;
      break;
    }
    case BlockKind::kMamba:
      p.mixer = ssm_weight_count(cfg.ssm(), true);
      break;
    case BlockKind::kIntra:
      p.mixer = intra_mixer_params(cfg);
      break;
  }
  if (spec.moe) {
    const std::int64_t expert = 3 * cfg.d_model * cfg.moe.expert_width(cfg.d_ffn);
    const std::int64_t router = cfg.d_model * cfg.moe.n_experts;
    p.ffn = router + (cfg.moe.shared + cfg.moe.n_experts) * expert;
    p.ffn_active = router + (cfg.moe.shared + cfg.moe.top_k) * expert;
  } else {
    p.ffn = p.ffn_active = 3 * cfg.d_model * cfg.d_ffn;
  }
  return p;
}

std::int64_t attention_params_closed_form(const ModelConfig& cfg) {
  return 2 * cfg.d_model * cfg.d_model + 2 * cfg.d_model * cfg.d_head * cfg.n_kv;
}

std::int64_t mamba_params_closed_form(const ModelConfig& cfg) {
  const SsmConfig s = cfg.ssm();
  const std::int64_t h = s.n_heads();
  return cfg.d_model * (2 * s.d_ssm + 2 * s.d_state + h) + s.d_state * (s.n_conv + cfg.d_model) + 2 * h;
}

std::int64_t block_mixer_closed_form(const BlockSpec& spec, const ModelConfig& cfg) {
  switch (spec.kind) {
    case BlockKind::kAttn:
    case BlockKind::kSwa:
      return attention_params_closed_form(cfg);
    case BlockKind::kMamba:
      return mamba_params_closed_form(cfg);
    case BlockKind::kIntra: {
      // reduced-width halves of both closed forms plus the fusion projections
      const AttnConfig a = cfg.intra_attn();
      ModelConfig half = cfg;
      half.d_ssm = intra_ssm_width(cfg);
      const std::int64_t wa = intra_attn_width(cfg);
      const std::int64_t wm = half.d_ssm;
      const std::int64_t proj = cfg.fusion.out_proj_count == 2 || cfg.fusion.fusion == FusionOp::kConcat ? wa + wm : wa;
      return cfg.d_model * (a.n_head * a.d_qk + a.n_kv * a.d_qk + a.n_kv * a.d_head) +
             mamba_params_closed_form(half) + proj * cfg.d_model;
    }
  }
  return 0;
}

std::int64_t block_cache_bytes(const BlockSpec& spec, const ModelConfig& cfg, std::int64_t l_ctx) {
  if (l_ctx < 0) throw ContractError("block_cache_bytes: negative context length");
  switch (spec.kind) {
    case BlockKind::kAttn: {
      const AttnConfig a = cfg.attn(spec);
      return kCacheBytesPerElement * (a.d_qk + a.d_head) * a.n_kv * l_ctx;
    }
    case BlockKind::kSwa: {
      const AttnConfig a = cfg.attn(spec);
      const std::int64_t l_swa = a.sliding->window + a.sliding->sink;
      return kCacheBytesPerElement * (a.d_qk + a.d_head) * a.n_kv * std::min(l_ctx, l_swa);
    }
    case BlockKind::kMamba:
      return kCacheBytesPerElement * ssm_state_elements(cfg.ssm());
    case BlockKind::kIntra: {
      const AttnConfig a = cfg.intra_attn();
      return kCacheBytesPerElement * ((a.d_qk + a.d_head) * a.n_kv * l_ctx + ssm_state_elements(cfg.intra_ssm()));
    }
  }
  return 0;
}

double block_flops_extra(const BlockSpec& spec, const ModelConfig& cfg, std::int64_t l_ctx) {
  if (l_ctx < 1) throw ContractError("block_flops_extra: context length must be >= 1");
  const auto l = static_cast<double>(l_ctx);
  auto full_attn = [&](const AttnConfig& a) { return 6.0 * attention_pair_width(a) * l * (l + 1.0) / 2.0; };
  switch (spec.kind) {
    case BlockKind::kAttn:
      return full_attn(cfg.attn(spec));
    case BlockKind::kSwa: {
      const AttnConfig a = cfg.attn(spec);
      const std::int64_t l_swa = a.sliding->window + a.sliding->sink;
      if (l_ctx <= l_swa) return full_attn(a);
      const auto ls = static_cast<double>(l_swa);
      return 6.0 * attention_pair_width(a) * ls * ((ls + 1.0) / 2.0 + (l - ls));
    }
    case BlockKind::kMamba:
      return 3.0 * l * ssm_scan_ops_per_token(cfg.ssm());
    case BlockKind::kIntra:
      return full_attn(cfg.intra_attn()) + 3.0 * l * ssm_scan_ops_per_token(cfg.intra_ssm());
  }
  return 0.0;
}

double block_flops_per_sample(const BlockSpec& spec, const ModelConfig& cfg, std::int64_t l_ctx) {
  return 6.0 * static_cast<double>(l_ctx) * static_cast<double>(block_params(spec, cfg).active()) +
         block_flops_extra(spec, cfg, l_ctx);
}

double block_decode_ops(const BlockSpec& spec, const ModelConfig& cfg, std::int64_t n_visible) {
  const double base = 2.0 * static_cast<double>(block_params(spec, cfg).active());
  switch (spec.kind) {
    case BlockKind::kAttn:
      return base + 2.0 * attention_pair_width(cfg.attn(spec)) * static_cast<double>(n_visible);
    case BlockKind::kSwa: {
      const AttnConfig a = cfg.attn(spec);
      const std::int64_t l_swa = a.sliding->window + a.sliding->sink;
      return base + 2.0 * attention_pair_width(a) * static_cast<double>(std::min(n_visible, l_swa));
    }
    case BlockKind::kMamba:
      return base + ssm_scan_ops_per_token(cfg.ssm());
    case BlockKind::kIntra:
      return base + 2.0 * attention_pair_width(cfg.intra_attn()) * static_cast<double>(n_visible) +
             ssm_scan_ops_per_token(cfg.intra_ssm());
  }
  return base;
}

CostReport cost_report(const LayoutSpec& layout, const ModelConfig& cfg, std::int64_t l_ctx, double tokens,
                       std::string layout_id) {
  if (l_ctx < 1) throw ContractError("cost_report: context length must be >= 1");
  CostReport r;
  r.layout_id = layout_id.empty() ? cfg.name : std::move(layout_id);
  r.l_ctx = l_ctx;
  r.tokens = tokens;
  r.params_nonemb = cfg.d_model;  // final norm
  r.activated_params = cfg.d_model;
  double extra = 0.0;
  for (const auto& b : layout.blocks) {
    const BlockParams p = block_params(b, cfg);
    r.params_per_block.push_back(p.total());
    r.closed_form_mixer_per_block.push_back(block_mixer_closed_form(b, cfg));
    r.params_nonemb += p.total();
    r.activated_params += p.active();
    r.cache_bytes += block_cache_bytes(b, cfg, l_ctx);
    extra += block_flops_extra(b, cfg, l_ctx);
  }
  r.params_emb = cfg.vocab * cfg.d_model;
  r.params_head = cfg.vocab * cfg.d_model;
  const auto l = static_cast<double>(l_ctx);
  r.flops_per_sample = 6.0 * l * static_cast<double>(r.activated_params) + extra;
  r.train_flops = r.flops_per_sample * tokens / l;
  return r;
}

double train_flops_total(const LayoutSpec& layout, const ModelConfig& cfg, std::int64_t l_ctx, double tokens) {
  if (!(tokens >= 1.0)) throw ContractError("train_flops_total: tokens must be >= 1");
  return cost_report(layout, cfg, l_ctx, tokens).train_flops;
}

std::vector<std::string> cost_csv_columns() {
  return {"layout_id",      "L_ctx",     "flops_per_sample", "train_flops",
          "params_nonemb", "params_emb", "cache_bytes",      "activated_params"};
}

void write_cost_csv(std::ostream& os, const std::vector<CostReport>& rows, const std::string& config_json) {
  write_csv_preamble(os, config_json);
  write_csv_row(os, cost_csv_columns());
  for (const auto& r : rows) {
    write_csv_row(os, {r.layout_id, std::to_string(r.l_ctx), fmt_full(r.flops_per_sample), fmt_full(r.train_flops),
                       std::to_string(r.params_nonemb), std::to_string(r.params_emb), std::to_string(r.cache_bytes),
                       std::to_string(r.activated_params)});
  }
}

void write_cost_table(std::ostream& os, const std::vector<CostReport>& rows) {
  os << std::left << std::setw(14) << "layout" << std::right << std::setw(8) << "L_ctx" << std::setw(12) << "FLOPs/smp"
     << std::setw(12) << "train FLOPs" << std::setw(10) << "N-emb" << std::setw(10) << "Emb" << std::setw(12)
     << "cache MiB" << std::setw(10) << "active" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(14) << r.layout_id << std::right << std::setw(8) << r.l_ctx << std::setw(12)
       << fmt_sig3(r.flops_per_sample) << std::setw(12) << fmt_sig3(r.train_flops) << std::setw(10)
       << fmt_sig3(static_cast<double>(r.params_nonemb)) << std::setw(10) << fmt_sig3(static_cast<double>(r.params_emb))
       << std::setw(12) << fmt_sig3(static_cast<double>(r.cache_bytes) / kMiB) << std::setw(10)
       << fmt_sig3(static_cast<double>(r.activated_params)) << '\n';
  }
}

}  // namespace hybridlab
