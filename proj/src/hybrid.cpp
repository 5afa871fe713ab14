#include "hybridlab/hybrid.hpp"

#include <cmath>

#include "hybridlab/ops.hpp"

namespace hybridlab {

std::int64_t intra_attn_width(const ModelConfig& cfg) { return cfg.n_head * cfg.d_head; }
std::int64_t intra_ssm_width(const ModelConfig& cfg) { return cfg.intra_ssm().d_ssm; }

namespace {

void check_intra_config(const ModelConfig& cfg) {
  if (!cfg.has_attention() || !cfg.has_ssm()) {
    throw ContractError("intra-hybrid block needs both attention and SSM dimensions in '" + cfg.name + "'");
  }
  cfg.fusion.validate();
  const bool single_merge = cfg.fusion.out_proj_count == 1 && cfg.fusion.fusion != FusionOp::kConcat;
  if (single_merge && intra_attn_width(cfg) != intra_ssm_width(cfg)) {
    throw DimensionError("intra-hybrid: " + std::string(to_string(cfg.fusion.fusion)) +
                         " with one projection needs equal branch widths, got " +
                         std::to_string(intra_attn_width(cfg)) + " vs " + std::to_string(intra_ssm_width(cfg)));
  }
}

Tensor flatten_heads(const Tensor& t) {
  Shape s = t.shape();
  const std::int64_t w = s[s.size() - 2] * s.back();
  s.pop_back();
  s.back() = w;
  return reshape(t, s);
}

}  // namespace

IntraWeights IntraWeights::init(const ModelConfig& cfg, CounterRng& rng) {
  check_intra_config(cfg);
  const AttnConfig ac = cfg.intra_attn();
  const SsmConfig sc = cfg.intra_ssm();
  IntraWeights w;
  CounterRng attn_rng = rng.fork("attn");
  w.attn = AttnWeights::init(ac, attn_rng, false);
  CounterRng ssm_rng = rng.fork("ssm");
  w.ssm = SsmParams::init(sc, ssm_rng, false);
  // only the conditioning tensors the design point uses are instantiated
  if (cfg.fusion.norm == NormKind::kGroup) {
    w.gn_attn = Tensor::full({ac.n_head, ac.d_head}, 1.0);
    w.gn_ssm = Tensor::full({sc.n_heads(), sc.d_head_ssm}, 1.0);
  }
  switch (cfg.fusion.scalar) {
    case ScalarKind::kNone:
      break;
    case ScalarKind::kScale:
      w.scale_attn = Tensor::full({1}, 1.0);
      w.scale_ssm = Tensor::full({1}, 1.0);
      break;
    case ScalarKind::kGate:
      w.gate_attn = Tensor::zeros({ac.n_head});
      w.gate_ssm = Tensor::zeros({sc.n_heads()});
      break;
    case ScalarKind::kDiffLambda: {
      CounterRng lam = rng.fork("lambda");
      w.lambda_q1 = randn({ac.d_head}, lam, 0.1);
      w.lambda_k1 = randn({ac.d_head}, lam, 0.1);
      w.lambda_q2 = randn({ac.d_head}, lam, 0.1);
      w.lambda_k2 = randn({ac.d_head}, lam, 0.1);
      break;
    }
  }
  CounterRng out = rng.fork("out");
  const std::int64_t wa = intra_attn_width(cfg);
  const std::int64_t wm = intra_ssm_width(cfg);
  if (cfg.fusion.out_proj_count == 2) {
    w.wo_attn = randn({wa, cfg.d_model}, out, 1.0 / std::sqrt(static_cast<double>(wa)));
    w.wo_ssm = randn({wm, cfg.d_model}, out, 1.0 / std::sqrt(static_cast<double>(wm)));
  } else {
    const std::int64_t width = cfg.fusion.fusion == FusionOp::kConcat ? wa + wm : wa;
    w.wo = randn({width, cfg.d_model}, out, 1.0 / std::sqrt(static_cast<double>(width)));
  }
  return w;
}

NamedTensors IntraWeights::named(const std::string& prefix) {
  NamedTensors out{{prefix + "attn.wq", &attn.wq}, {prefix + "attn.wk", &attn.wk}, {prefix + "attn.wv", &attn.wv}};
  const char* ssm_names[] = {"in_proj", "conv_w", "conv_b", "a_log", "d_skip", "dt_bias", "norm_w"};
  auto st = ssm.tensors();
  for (std::size_t i = 0; i < 7; ++i) out.emplace_back(prefix + "ssm." + ssm_names[i], st[i]);
  const std::pair<const char*, Tensor*> optional_parts[] = {
      {"gn_attn", &gn_attn},     {"gn_ssm", &gn_ssm},       {"scale_attn", &scale_attn}, {"scale_ssm", &scale_ssm},
      {"gate_attn", &gate_attn}, {"gate_ssm", &gate_ssm},   {"lambda_q1", &lambda_q1},   {"lambda_k1", &lambda_k1},
      {"lambda_q2", &lambda_q2}, {"lambda_k2", &lambda_k2}, {"wo", &wo},                 {"wo_attn", &wo_attn},
      {"wo_ssm", &wo_ssm}};
  for (const auto& [name, t] : optional_parts) {
    if (t->defined()) out.emplace_back(prefix + name, t);
  }
  return out;
}

std::pair<Tensor, Tensor> condition_branches(const Tensor& a, const Tensor& m, const FusionSpec& spec,
                                             const IntraWeights& w) {
  Tensor ca = a;
  Tensor cm = m;
  if (spec.norm == NormKind::kGroup) {
    ca = group_norm_per_head(ca, w.gn_attn);
    cm = group_norm_per_head(cm, w.gn_ssm);
  }
  switch (spec.scalar) {
    case ScalarKind::kNone:
      break;
    case ScalarKind::kScale:
      ca = broadcast_mul(ca, w.scale_attn);
      cm = broadcast_mul(cm, w.scale_ssm);
      break;
    case ScalarKind::kGate:
      ca = broadcast_mul(ca, reshape(sigmoid(w.gate_attn), {w.gate_attn.numel(), 1}));
      cm = broadcast_mul(cm, reshape(sigmoid(w.gate_ssm), {w.gate_ssm.numel(), 1}));
      break;
    case ScalarKind::kDiffLambda: {
      // lambda = exp(q1.k1) - exp(q2.k2) + lambda_init, weighting the SSM branch
      Tensor lam = add_scalar(sub(exponential(sum(mul(w.lambda_q1, w.lambda_k1))),
                                  exponential(sum(mul(w.lambda_q2, w.lambda_k2)))),
                              w.lambda_init);
      cm = broadcast_mul(cm, lam);
      break;
    }
  }
  return {ca, cm};
}

Tensor fuse_pre_projection(const Tensor& a, const Tensor& m, const FusionSpec& spec) {
  const Tensor fa = flatten_heads(a);
  const Tensor fm = flatten_heads(m);
  switch (spec.fusion) {
    case FusionOp::kAdd:
      return add(fa, fm);
    case FusionOp::kDiff:
      return sub(fa, fm);
    case FusionOp::kConcat: {
      const Tensor parts[] = {fa, fm};
      return concat_last(parts);
    }
  }
  throw ContractError("fuse_pre_projection: unknown fusion op");
}

Tensor fuse_and_project(const Tensor& a, const Tensor& m, const FusionSpec& spec, const IntraWeights& w) {
  if (spec.out_proj_count == 1) return matmul(fuse_pre_projection(a, m, spec), w.wo);
  if (spec.fusion == FusionOp::kConcat) throw ContractError("concat fusion requires a single output projection");
  Tensor pa = matmul(flatten_heads(a), w.wo_attn);
  Tensor pm = matmul(flatten_heads(m), w.wo_ssm);
  return spec.fusion == FusionOp::kAdd ? add(pa, pm) : sub(pa, pm);
}

Tensor intra_hybrid_forward(const Tensor& x, const ModelConfig& cfg, const IntraWeights& w) {
  check_intra_config(cfg);
  const SsmConfig sc = cfg.intra_ssm();
  Tensor a = attention_heads(x, cfg.intra_attn(), w.attn);
  Tensor m = reshape(ssm_inner_forward(x, sc, w.ssm, sc.chunk), {x.dim(0), sc.n_heads(), sc.d_head_ssm});
  auto [ca, cm] = condition_branches(a, m, cfg.fusion, w);
  return fuse_and_project(ca, cm, cfg.fusion, w);
}

std::int64_t cache_element_count(const LayerCache& c) {
  return std::visit(
      [](const auto& v) -> std::int64_t {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, IntraCache>) {
          return v.kv.element_count() + v.ssm.element_count();
        } else {
          return v.element_count();
        }
      },
      c);
}

Tensor Layer::mixer(const Tensor& h) const {
  switch (spec.kind) {
    case BlockKind::kAttn:
    case BlockKind::kSwa:
      return causal_attention_forward(h, cfg.attn(spec), *attn);
    case BlockKind::kMamba:
      return ssm_forward(h, cfg.ssm(), *ssm);
    case BlockKind::kIntra:
      return intra_hybrid_forward(h, cfg, *intra);
  }
  throw ContractError("Layer: unknown block kind");
}

Tensor Layer::forward(const Tensor& x, Routing* routing) const {
  Tensor h = add(x, mixer(rms_norm(x, norm_mix)));
  Tensor n = rms_norm(h, norm_ffn);
  Tensor f = moe ? moe_forward(n, *moe, router, cfg.moe, routing) : siglu_ffn(n, cfg.ffn(), *ffn);
  return add(h, f);
}

LayerCache Layer::make_cache() const {
  switch (spec.kind) {
    case BlockKind::kAttn: {
      const AttnConfig a = cfg.attn(spec);
      return FullKvCache(a.n_kv, a.d_qk, a.d_head);
    }
    case BlockKind::kSwa: {
      const AttnConfig a = cfg.attn(spec);
      return RollingKvCache(a.n_kv, a.d_qk, a.d_head, *a.sliding);
    }
    case BlockKind::kMamba:
      return SsmState::zeros(cfg.ssm());
    case BlockKind::kIntra: {
      const AttnConfig a = cfg.intra_attn();
      return IntraCache{FullKvCache(a.n_kv, a.d_qk, a.d_head), SsmState::zeros(cfg.intra_ssm())};
    }
  }
  throw ContractError("Layer: unknown block kind");
}

Tensor Layer::step(const Tensor& x_t, std::int64_t pos, LayerCache& cache) const {
  const Tensor n1 = rms_norm(x_t, norm_mix);
  Tensor mixed;
  switch (spec.kind) {
    case BlockKind::kAttn: {
      const AttnConfig a = cfg.attn(spec);
      Tensor heads = attention_step_heads(n1, pos, a, *attn, std::get<FullKvCache>(cache));
      mixed = matmul(reshape(heads, {1, a.n_head * a.d_head}), attn->wo);
      break;
    }
    case BlockKind::kSwa: {
      const AttnConfig a = cfg.attn(spec);
      Tensor heads = attention_step_heads(n1, pos, a, *attn, std::get<RollingKvCache>(cache));
      mixed = matmul(reshape(heads, {1, a.n_head * a.d_head}), attn->wo);
      break;
    }
    case BlockKind::kMamba:
      mixed = ssm_step(std::get<SsmState>(cache), n1, cfg.ssm(), *ssm);
      break;
    case BlockKind::kIntra: {
      auto& ic = std::get<IntraCache>(cache);
      const SsmConfig sc = cfg.intra_ssm();
      Tensor a = attention_step_heads(n1, pos, cfg.intra_attn(), intra->attn, ic.kv);
      Tensor m = reshape(ssm_inner_step(ic.ssm, n1, sc, intra->ssm), {1, sc.n_heads(), sc.d_head_ssm});
      auto [ca, cm] = condition_branches(a, m, cfg.fusion, *intra);
      mixed = fuse_and_project(ca, cm, cfg.fusion, *intra);
      break;
    }
  }
  Tensor h = add(x_t, mixed);
  Tensor n2 = rms_norm(h, norm_ffn);
  Tensor f = moe ? moe_forward(n2, *moe, router, cfg.moe) : siglu_ffn(n2, cfg.ffn(), *ffn);
  return add(h, f);
}

NamedTensors Layer::named(const std::string& prefix) {
  NamedTensors out{{prefix + "norm_mix", &norm_mix}, {prefix + "norm_ffn", &norm_ffn}};
  if (attn) {
    out.insert(out.end(), {{prefix + "attn.wq", &attn->wq},
                           {prefix + "attn.wk", &attn->wk},
                           {prefix + "attn.wv", &attn->wv},
                           {prefix + "attn.wo", &attn->wo}});
  }
  if (ssm) {
    const char* names[] = {"in_proj", "conv_w", "conv_b", "a_log", "d_skip", "dt_bias", "norm_w", "out_proj"};
    auto st = ssm->tensors();
    for (std::size_t i = 0; i < st.size(); ++i) out.emplace_back(prefix + "ssm." + names[i], st[i]);
  }
  if (intra) {
    auto in = intra->named(prefix + "intra.");
    out.insert(out.end(), in.begin(), in.end());
  }
  if (ffn) {
    out.insert(out.end(),
               {{prefix + "ffn.gate", &ffn->gate}, {prefix + "ffn.up", &ffn->up}, {prefix + "ffn.down", &ffn->down}});
  }
  if (moe) {
    out.emplace_back(prefix + "moe.router", &moe->router);
    auto add_group = [&](std::vector<FfnWeights>& group, const std::string& tag) {
      for (std::size_t i = 0; i < group.size(); ++i) {
        const std::string p = prefix + "moe." + tag + "." + std::to_string(i) + ".";
        out.insert(out.end(), {{p + "gate", &group[i].gate}, {p + "up", &group[i].up}, {p + "down", &group[i].down}});
      }
    };
    add_group(moe->shared, "shared");
    add_group(moe->experts, "expert");
  }
  return out;
}

std::int64_t Layer::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : const_cast<Layer*>(this)->named("")) n += t->numel();
  return n;
}

Layer build_block(const BlockSpec& spec, const ModelConfig& base, CounterRng& rng) {
  base.validate();
  if ((spec.window || spec.sink) && spec.kind != BlockKind::kSwa) {
    throw ContractError("build_block: window/sink overrides only apply to swa blocks");
  }
  Layer l;
  l.spec = spec;
  l.cfg = base;
  l.norm_mix = Tensor::full({base.d_model}, 1.0);
  l.norm_ffn = Tensor::full({base.d_model}, 1.0);
  switch (spec.kind) {
    case BlockKind::kAttn:
    case BlockKind::kSwa: {
      const AttnConfig a = base.attn(spec);
      a.validate();
      CounterRng r = rng.fork("attn");
      l.attn = AttnWeights::init(a, r);
      break;
    }
    case BlockKind::kMamba: {
      CounterRng r = rng.fork("ssm");
      l.ssm = SsmParams::init(base.ssm(), r);
      break;
    }
    case BlockKind::kIntra: {
      CounterRng r = rng.fork("intra");
      l.intra = IntraWeights::init(base, r);
      break;
    }
  }
  if (spec.moe) {
    CounterRng r = rng.fork("moe");
    l.moe = MoeWeights::init(base.d_model, base.d_ffn, base.moe, r);
    l.router = RouterState::zeros(base.moe.n_experts);
  } else {
    CounterRng r = rng.fork("ffn");
    l.ffn = FfnWeights::init(base.ffn(), r);
  }
  return l;
}

}  // namespace hybridlab
