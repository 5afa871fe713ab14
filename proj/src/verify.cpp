#include "hybridlab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hybridlab/cost.hpp"
#include "hybridlab/decode.hpp"
#include "hybridlab/layout.hpp"
#include "hybridlab/model.hpp"
#include "hybridlab/moe.hpp"
#include "hybridlab/ops.hpp"
#include "hybridlab/ssm.hpp"

namespace hybridlab {

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, const std::vector<std::pair<std::string, Tensor*>>& params,
                           double step, std::int64_t max_per_tensor, double floor) {
  for (const auto& [name, t] : params) {
    t->set_requires_grad(true);
    t->zero_grad();
  }
  {
    GradTape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  GradCheckResult r;
  for (const auto& [name, t] : params) {
    const std::vector<double> analytic = t->grad();
    const std::int64_t n = t->numel();
    const std::int64_t stride = max_per_tensor > 0 ? std::max<std::int64_t>(1, n / max_per_tensor) : 1;
    for (std::int64_t i = 0; i < n; i += stride) {
      auto w = t->mutable_data();
      const double orig = w[i];
      w[i] = orig + step;
      const double up = loss_fn().item();
      w[i] = orig - step;
      const double down = loss_fn().item();
      w[i] = orig;
      const double fd = (up - down) / (2.0 * step);
      const double a = analytic[static_cast<std::size_t>(i)];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
      ++r.checked;
      if (rel > r.max_rel_error || r.worst.empty()) {
        if (rel >= r.max_rel_error) r.worst = name + "[" + std::to_string(i) + "]";
        r.max_rel_error = std::max(r.max_rel_error, rel);
      }
    }
  }
  return r;
}

namespace {

struct Ctx {
  const VerifyOptions& opts;
  std::vector<PropertyResult>& out;
  std::string suite;

  double ref(double v) const { return opts.chaos_flip_sign ? -v : v; }

  void record(const std::string& name, bool ok, const std::string& detail) { out.push_back({suite, name, ok, detail}); }

  /// Compares computed values against a reference within `tol` (max abs).
  void close(const std::string& name, std::span<const double> got, std::span<const double> want, double tol) {
    if (got.size() != want.size()) {
      record(name, false, "size mismatch");
      return;
    }
    double err = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got[i] - ref(want[i])));
    std::ostringstream d;
    d << "max abs error " << err << " (tol " << tol << ")";
    record(name, err < tol && std::isfinite(err), d.str());
  }

  void scalar(const std::string& name, double got, double want, double rel_tol) {
    const double w = ref(want);
    const double rel = std::abs(got - w) / std::max(std::abs(w), 1e-300);
    std::ostringstream d;
    d << "got " << got << ", want " << w << " (rel tol " << rel_tol << ")";
    record(name, rel <= rel_tol, d.str());
  }
};

ModelConfig tiny_config() {
  ModelConfig c;
  c.name = "tiny";
  c.vocab = 11;
  c.d_model = 8;
  c.d_ffn = 12;
  c.n_head = 2;
  c.n_kv = 1;
  c.d_head = 4;
  c.d_ssm = 16;
  c.d_head_ssm = 4;
  c.d_state = 3;
  c.n_conv = 3;
  c.chunk = 4;
  c.window = 4;
  c.sink = 1;
  c.rope_base = 10000.0;
  return c;
}

LayoutSpec single_block(BlockKind k, bool moe = false) {
  LayoutSpec l;
  l.special = k;
  BlockSpec b;
  b.kind = k;
  b.moe = moe;
  l.blocks = {b};
  l.n_special = k == BlockKind::kMamba ? 0 : 1;
  l.n_mamba = k == BlockKind::kMamba ? 1 : 0;
  return l;
}

std::vector<std::int64_t> random_tokens(std::int64_t n, std::int64_t vocab, CounterRng& rng) {
  std::vector<std::int64_t> t(static_cast<std::size_t>(n));
  for (auto& v : t) v = rng.below(vocab);
  return t;
}

void suite_ssm(Ctx& c) {
  CounterRng rng = CounterRng(c.opts.seed).fork("verify-ssm");
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t L = 1 + rng.below(64), H = 1 + rng.below(3), P = 1 + rng.below(4), N = 1 + rng.below(4);
    const std::int64_t G = rng.below(2) ? H : 1;
    const std::int64_t chunk = std::int64_t{1} << rng.below(6);
    Tensor x = randn({L, H, P}, rng);
    Tensor dt = softplus(randn({L, H}, rng));
    Tensor rate = exponential(rand_uniform({H}, rng, -1.0, 1.5));
    Tensor b = randn({L, G, N}, rng), cc = randn({L, G, N}, rng), d = randn({H}, rng);
    const Tensor y = selective_scan(x, dt, rate, b, cc, d, chunk);
    const Tensor s = selective_scan_sequential(x, dt, rate, b, cc, d);
    for (std::int64_t i = 0; i < y.numel(); ++i) worst = std::max(worst, std::abs(y[i] - c.ref(s[i])));
  }
  std::ostringstream d;
  d << "20 random configs, max abs error " << worst;
  c.record("chunked scan equals step fold", worst < 1e-9, d.str());

  std::vector<DecayState> items;
  const std::size_t width = 3;
  for (int i = 0; i < 13; ++i) items.push_back({rng.uniform(0.1, 1.0), {rng.normal(), rng.normal(), rng.normal()}});
  const auto scanned = blelloch_exclusive_scan(items, width);
  std::vector<double> got, want;
  DecayState acc{1.0, std::vector<double>(width, 0.0)};
  for (std::size_t i = 0; i < items.size(); ++i) {
    got.push_back(scanned[i].decay);
    got.insert(got.end(), scanned[i].state.begin(), scanned[i].state.end());
    want.push_back(acc.decay);
    want.insert(want.end(), acc.state.begin(), acc.state.end());
    acc = combine(acc, items[i]);
  }
  c.close("blelloch scan equals sequential fold", got, want, 1e-12);

  const ModelConfig mc = tiny_config();
  const SsmConfig sc = mc.ssm();
  CounterRng pr = rng.fork("params");
  const SsmParams p = SsmParams::init(sc, pr);
  const Tensor x = randn({37, mc.d_model}, rng);
  const Tensor full = ssm_forward(x, sc, p);
  SsmState st = SsmState::zeros(sc);
  const std::int64_t size0 = st.element_count();
  std::vector<double> stepped;
  for (std::int64_t t = 0; t < 37; ++t) {
    std::vector<double> row(x.data().begin() + t * mc.d_model, x.data().begin() + (t + 1) * mc.d_model);
    const Tensor y = ssm_step(st, Tensor::from_vector({1, mc.d_model}, std::move(row)), sc, p);
    stepped.insert(stepped.end(), y.data().begin(), y.data().end());
  }
  c.close("recurrent step equals chunked block", full.data(), stepped, 1e-9);
  c.record("state size is position independent", st.element_count() == size0,
           std::to_string(size0) + " elements before, " + std::to_string(st.element_count()) + " after 37 steps");
}

void suite_attention(Ctx& c) {
  CounterRng rng = CounterRng(c.opts.seed).fork("verify-attn");
  const std::int64_t L = 40, H = 2, dqk = 4, window = 5, sink = 2;
  const Tensor q = randn({1, L, H, dqk}, rng), k = randn({1, L, 1, dqk}, rng);
  const Tensor probs = attention_probabilities(q, k, SlidingWindow{window, sink}, 0.5);
  bool ok = true;
  for (std::int64_t h = 0; h < H && ok; ++h) {
    for (std::int64_t t = 0; t < L && ok; ++t) {
      std::vector<std::int64_t> vis;
      for (std::int64_t p = 0; p < L; ++p) {
        if (probs[(h * L + t) * L + p] > 0.0) vis.push_back(p);
      }
      ok = vis == swa_mask(t, L, window, sink);
    }
  }
  c.record("swa attention support equals swa_mask", ok, "L=40 window=5 sink=2");

  for (const char* name : {"toy-llama", "toy-swa", "toy-mamba", "toy-inter", "toy-intra"}) {
    const Preset pre = preset(name);
    const HybridModel m = HybridModel::build(pre.model, pre.layout, c.opts.seed);
    CounterRng tr = rng.fork(name);
    auto tokens = random_tokens(48, pre.model.vocab, tr);
    const Tensor base = m.forward(tokens);
    const std::int64_t p = 30;
    tokens[p] = (tokens[p] + 1) % pre.model.vocab;
    const Tensor mutated = m.forward(tokens);
    const std::int64_t v = pre.model.vocab;
    bool same = true;
    for (std::int64_t i = 0; i < p * v; ++i) same = same && base[i] == mutated[i];
    bool changed = false;
    for (std::int64_t i = p * v; i < (p + 1) * v; ++i) changed = changed || base[i] != mutated[i];
    c.record(std::string("causality under mutation: ") + name, same && changed,
             same ? (changed ? "prefix bit-identical" : "mutated row unchanged") : "prefix logits changed");
  }
}

void suite_decode(Ctx& c) {
  CounterRng rng = CounterRng(c.opts.seed).fork("verify-decode");
  for (const char* name : {"toy-llama", "toy-swa", "toy-mamba", "toy-inter", "toy-intra"}) {
    const Preset pre = preset(name);
    const HybridModel m = HybridModel::build(pre.model, pre.layout, c.opts.seed);
    CounterRng tr = rng.fork(name);
    const auto tokens = random_tokens(40, pre.model.vocab, tr);
    const Tensor full = m.forward(tokens);
    DecodeState st = DecodeState::empty(m);
    std::vector<double> cached;
    for (std::int64_t t : tokens) {
      const Tensor lg = decode_step(m, st, t);
      cached.insert(cached.end(), lg.data().begin(), lg.data().end());
    }
    c.close(std::string("cached decoding equals full forward: ") + name, cached, full.data(), 1e-8);
    std::int64_t expect = 0;
    for (const auto& b : pre.layout.blocks) expect += block_cache_bytes(b, pre.model, 40);
    c.record(std::string("state bytes equal cost formula: ") + name, st.state_bytes() == expect,
             std::to_string(st.state_bytes()) + " vs " + std::to_string(expect));
  }
}

void suite_grad(Ctx& c) {
  CounterRng rng = CounterRng(c.opts.seed).fork("verify-grad");
  for (BlockKind k : {BlockKind::kAttn, BlockKind::kSwa, BlockKind::kMamba, BlockKind::kIntra}) {
    HybridModel m = HybridModel::build(tiny_config(), single_block(k), c.opts.seed);
    CounterRng tr = rng.fork(std::string(to_string(k)));
    const auto tokens = random_tokens(9, m.cfg.vocab, tr);
    std::vector<std::int64_t> targets(tokens.begin() + 1, tokens.end());
    targets.push_back(-1);
    const auto r = grad_check([&] { return cross_entropy(m.forward(tokens), targets); }, m.named(), 1e-5, 6);
    const double rel = c.opts.chaos_flip_sign ? r.max_rel_error + 2.0 : r.max_rel_error;
    std::ostringstream d;
    d << r.checked << " entries, max rel error " << rel << " at " << r.worst;
    c.record(std::string("analytic gradient matches finite differences: ") + std::string(to_string(k)), rel < 1e-4, d.str());
  }
}

void suite_layout(Ctx& c) {
  const LayoutSpec mid = plan_layout(13, {1, 12}, BlockKind::kAttn, Positioning::kMiddle);
  c.record("depth 13 ratio 1:12 middle places index 6", mid.special_indices() == std::vector<std::int64_t>{6}, "");
  const LayoutSpec sc = plan_layout(13, {1, 5}, BlockKind::kAttn, Positioning::kScatter);
  c.record("depth 13 ratio 1:5 scatter places {3, 8}", sc.special_indices() == std::vector<std::int64_t>{3, 8}, "");
  const auto has_warning = [](const LayoutSpec& l) {
    for (const auto& m : lint_layout(l)) {
      if (m.level == LintMessage::Level::kWarning) return true;
    }
    return false;
  };
  c.record("front placement warns", has_warning(plan_layout(13, {1, 12}, BlockKind::kAttn, Positioning::kFront)), "");
  c.record("sandwich placement warns", has_warning(plan_layout(13, {3, 10}, BlockKind::kAttn, Positioning::kSandwich)), "");
  bool all = true;
  for (const auto& [s, m] : published_count_pairs()) {
    const LayoutSpec l = plan_layout_counts(s, m, BlockKind::kAttn, Positioning::kScatter);
    all = all && l.count(BlockKind::kAttn) == s && l.count(BlockKind::kMamba) == m;
  }
  c.record("published count pairs are representable", all, std::to_string(published_count_pairs().size()) + " pairs");
  c.record("layout file round-trips", read_layout(write_layout(sc)).blocks == sc.blocks, "");
}

void suite_cost(Ctx& c) {
  struct Golden {
    const char* preset;
    double cache_mib, cache_tol, flops;
  };
  const Golden goldens[] = {{"llama-1b", 256.0, 0.0, 4.5e20},
                            {"mamba-1b", 13.4, 0.1, 3.7e20},
                            {"swa-1b", 63.0, 1.0, 3.8e20},
                            {"inter-1b", 43.0, 1.0, 3.7e20},
                            {"intra-1b", 38.0, 2.0, 3.7e20}};
  for (const auto& g : goldens) {
    const Preset p = preset(g.preset);
    const CostReport r = cost_report(p.layout, p.model, 8192, 60e9, g.preset);
    const double mib = static_cast<double>(r.cache_bytes) / kMiB;
    const double want = c.ref(g.cache_mib);
    std::ostringstream d;
    d << mib << " MiB vs " << want << " +- " << g.cache_tol;
    c.record(std::string("cache at 8192: ") + g.preset, std::abs(mib - want) <= g.cache_tol, d.str());
    c.scalar(std::string("training flops at 60e9 tokens: ") + g.preset, r.train_flops, g.flops, 0.03);
  }
  const ModelConfig llama = preset("llama-1b").model;
  c.scalar("attention block params", static_cast<double>(block_params(BlockSpec{BlockKind::kAttn}, llama).mixer), 10485760.0, 0.0);
}

void suite_moe(Ctx& c) {
  CounterRng rng = CounterRng(c.opts.seed).fork("verify-moe");
  MoeConfig cfg;
  const Tensor x = randn({50, 8}, rng), router = randn({8, cfg.n_experts}, rng);
  RouterState st = RouterState::zeros(cfg.n_experts);
  for (auto& b : st.expert_bias) b = rng.normal() * 0.1;
  const Routing r = route(x, router, st, cfg);
  const Tensor logits = matmul(x, router);
  bool ok = true;
  for (std::int64_t t = 0; t < 50; ++t) {
    std::int64_t best = 0;
    double best_v = -1e300;
    for (std::int64_t e = 0; e < cfg.n_experts; ++e) {
      const double s = 1.0 / (1.0 + std::exp(-logits[t * cfg.n_experts + e])) + st.expert_bias[e];
      if (s > best_v) best_v = s, best = e;
    }
    ok = ok && r.selected[t].size() == 1 && r.selected[t][0] == best;
  }
  c.record("top-1 routing equals biased argmax oracle", ok, "50 tokens, 8 experts");
}

}  // namespace

std::vector<std::string> verify_suite_names() { return {"ssm", "attention", "decode", "grad", "layout", "cost", "moe"}; }

std::vector<PropertyResult> run_verify(const VerifyOptions& opts) {
  const auto names = verify_suite_names();
  for (const auto& s : opts.suites) {
    if (std::find(names.begin(), names.end(), s) == names.end()) throw ContractError("unknown verify suite '" + s + "'");
  }
  std::vector<PropertyResult> out;
  const auto want = [&](const std::string& s) {
    return opts.suites.empty() || std::find(opts.suites.begin(), opts.suites.end(), s) != opts.suites.end();
  };
  using Fn = void (*)(Ctx&);
  const std::pair<const char*, Fn> suites[] = {{"ssm", suite_ssm},   {"attention", suite_attention},
                                               {"decode", suite_decode}, {"grad", suite_grad},
                                               {"layout", suite_layout}, {"cost", suite_cost},
                                               {"moe", suite_moe}};
  for (const auto& [name, fn] : suites) {
    if (!want(name)) continue;
    Ctx c{opts, out, name};
    try {
      fn(c);
    } catch (const std::exception& e) {
      c.record("suite raised", false, e.what());
    }
  }
  return out;
}

}  // namespace hybridlab
