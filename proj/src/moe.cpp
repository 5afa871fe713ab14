#include "hybridlab/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hybridlab/ops.hpp"

namespace hybridlab {

MoeWeights MoeWeights::init(std::int64_t d_model, std::int64_t d_ffn, const MoeConfig& cfg, CounterRng& rng) {
  cfg.validate();
  MoeWeights w;
  w.expert_ffn = FfnConfig{d_model, cfg.expert_width(d_ffn)};
  if (w.expert_ffn.d_ffn <= 0) throw ContractError("MoeWeights: expert width must be positive");
  w.router = randn({d_model, cfg.n_experts}, rng, 1.0 / std::sqrt(static_cast<double>(d_model)));
  // experts may be narrower than d_model, so they skip FfnConfig's width rule
  auto make = [&](CounterRng r) {
    const double s_in = 1.0 / std::sqrt(static_cast<double>(d_model));
    const double s_out = 1.0 / std::sqrt(static_cast<double>(w.expert_ffn.d_ffn));
    return FfnWeights{randn({d_model, w.expert_ffn.d_ffn}, r, s_in), randn({d_model, w.expert_ffn.d_ffn}, r, s_in),
                      randn({w.expert_ffn.d_ffn, d_model}, r, s_out)};
  };
  for (std::int64_t i = 0; i < cfg.shared; ++i) w.shared.push_back(make(rng.fork("shared").fork(static_cast<std::uint64_t>(i))));
  for (std::int64_t i = 0; i < cfg.n_experts; ++i) w.experts.push_back(make(rng.fork("expert").fork(static_cast<std::uint64_t>(i))));
  return w;
}

std::vector<Tensor*> MoeWeights::tensors() {
  std::vector<Tensor*> out{&router};
  for (auto* group : {&shared, &experts}) {
    for (auto& f : *group) {
      out.push_back(&f.gate);
      out.push_back(&f.up);
      out.push_back(&f.down);
    }
  }
  return out;
}

RouterState RouterState::zeros(std::int64_t n_experts) {
  return RouterState{std::vector<double>(static_cast<std::size_t>(n_experts), 0.0),
                     std::vector<std::int64_t>(static_cast<std::size_t>(n_experts), 0)};
}

namespace {

Routing route_scores(std::span<const double> scores, std::int64_t len, const RouterState& state, const MoeConfig& cfg) {
  const std::int64_t e = cfg.n_experts;
  Routing r;
  r.loads.assign(static_cast<std::size_t>(e), 0);
  std::vector<std::int64_t> order(static_cast<std::size_t>(e));
  for (std::int64_t t = 0; t < len; ++t) {
    std::iota(order.begin(), order.end(), 0);
    const double* row = scores.data() + t * e;
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      return row[a] + state.expert_bias[a] > row[b] + state.expert_bias[b];
    });
    std::vector<std::int64_t> sel(order.begin(), order.begin() + cfg.top_k);
    std::vector<double> g;
    for (std::int64_t i : sel) {
      g.push_back(row[i]);
      ++r.loads[i];
    }
    r.selected.push_back(std::move(sel));
    r.gates.push_back(std::move(g));
  }
  return r;
}

void check_router(const Tensor& tokens, const Tensor& router, const RouterState& state, const MoeConfig& cfg) {
  cfg.validate();
  if (tokens.rank() != 2 || router.shape() != Shape{tokens.dim(1), cfg.n_experts}) {
    throw DimensionError("moe: tokens " + shape_str(tokens.shape()) + " vs router " + shape_str(router.shape()));
  }
  if (static_cast<std::int64_t>(state.expert_bias.size()) != cfg.n_experts) {
    throw DimensionError("moe: router state has the wrong expert count");
  }
}

}  // namespace

Routing route(const Tensor& tokens, const Tensor& router_weights, const RouterState& state, const MoeConfig& cfg) {
  check_router(tokens, router_weights, state, cfg);
  Tensor scores = sigmoid(matmul(tokens, router_weights));
  return route_scores(scores.data(), tokens.dim(0), state, cfg);
}

Tensor moe_forward(const Tensor& x, const MoeWeights& w, const RouterState& state, const MoeConfig& cfg,
                   Routing* routing_out) {
  check_router(x, w.router, state, cfg);
  if (static_cast<std::int64_t>(w.experts.size()) != cfg.n_experts ||
      static_cast<std::int64_t>(w.shared.size()) != cfg.shared) {
    throw DimensionError("moe: weight set does not match MoeConfig");
  }
  const std::int64_t len = x.dim(0);
  Tensor scores = sigmoid(matmul(x, w.router));
  Routing r = route_scores(scores.data(), len, state, cfg);
  auto ffn = [&](const Tensor& in, const FfnWeights& f) {
    return matmul(mul(silu(matmul(in, f.gate)), matmul(in, f.up)), f.down);
  };
  Tensor out = Tensor::zeros(x.shape());
  for (const auto& s : w.shared) out = add(out, ffn(x, s));
  for (std::int64_t e = 0; e < cfg.n_experts; ++e) {
    std::vector<std::int64_t> idx;
    std::vector<std::int64_t> cols;
    for (std::int64_t t = 0; t < len; ++t) {
      if (std::find(r.selected[t].begin(), r.selected[t].end(), e) != r.selected[t].end()) {
        idx.push_back(t);
        cols.push_back(e);
      }
    }
    if (idx.empty()) continue;
    Tensor gate = pick_cols(take_rows(scores, idx), cols);  // [n_e, 1]
    Tensor y = broadcast_mul(ffn(take_rows(x, idx), w.experts[e]), gate);
    out = add(out, scatter_rows(y, idx, len));
  }
  if (routing_out) *routing_out = std::move(r);
  return out;
}

RouterState update_balance(const RouterState& state, const std::vector<std::int64_t>& batch_loads,
                           const MoeConfig& cfg) {
  cfg.validate();
  if (batch_loads.size() != state.expert_bias.size()) throw DimensionError("update_balance: load vector size");
  const double total = static_cast<double>(std::accumulate(batch_loads.begin(), batch_loads.end(), std::int64_t{0}));
  const double mean = total / static_cast<double>(batch_loads.size());
  RouterState next = state;
  for (std::size_t i = 0; i < batch_loads.size(); ++i) {
    const double diff = mean - static_cast<double>(batch_loads[i]);
    const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
    next.expert_bias[i] += cfg.bias_update_rate * sign;
    next.load_counts[i] += batch_loads[i];
  }
  return next;
}

double BalanceSimulation::max_load_fraction(std::int64_t step) const {
  const auto& l = loads.at(static_cast<std::size_t>(step));
  const double total = static_cast<double>(std::accumulate(l.begin(), l.end(), std::int64_t{0}));
  return static_cast<double>(*std::max_element(l.begin(), l.end())) / total;
}

double BalanceSimulation::tail_max_fraction(std::int64_t window) const {
  if (loads.empty()) throw ContractError("tail_max_fraction: empty simulation");
  const std::size_t n = std::min(loads.size(), static_cast<std::size_t>(std::max<std::int64_t>(1, window)));
  std::vector<std::int64_t> sum(loads[0].size(), 0);
  for (std::size_t s = loads.size() - n; s < loads.size(); ++s)
    for (std::size_t e = 0; e < sum.size(); ++e) sum[e] += loads[s][e];
  const double total = static_cast<double>(std::accumulate(sum.begin(), sum.end(), std::int64_t{0}));
  return static_cast<double>(*std::max_element(sum.begin(), sum.end())) / total;
}

BalanceSimulation simulate_balancing(const MoeConfig& cfg, std::int64_t d_model, std::int64_t tokens_per_step,
                                     std::int64_t steps, double skew, std::uint64_t seed) {
  cfg.validate();
  if (d_model < 2 || tokens_per_step < 1 || steps < 1) throw ContractError("simulate_balancing: sizes too small");
  const CounterRng root = CounterRng(seed).fork("balance");
  CounterRng wr = root.fork("router");
  std::vector<double> w(static_cast<std::size_t>(d_model * cfg.n_experts));
  for (auto& v : w) v = wr.normal() / std::sqrt(static_cast<double>(d_model));
  for (std::int64_t e = 0; e < cfg.n_experts; ++e) {
    w[static_cast<std::size_t>(e)] = cfg.n_experts > 1 ? skew * static_cast<double>(e) / static_cast<double>(cfg.n_experts - 1) : 0.0;
  }
  const Tensor router = Tensor::from_vector({d_model, cfg.n_experts}, std::move(w));
  BalanceSimulation sim;
  sim.final_state = RouterState::zeros(cfg.n_experts);
  for (std::int64_t s = 0; s < steps; ++s) {
    CounterRng tr = root.fork("tokens").fork(static_cast<std::uint64_t>(s));
    std::vector<double> x(static_cast<std::size_t>(tokens_per_step * d_model));
    for (std::int64_t t = 0; t < tokens_per_step; ++t) {
      x[static_cast<std::size_t>(t * d_model)] = 1.0;
      for (std::int64_t j = 1; j < d_model; ++j) x[static_cast<std::size_t>(t * d_model + j)] = tr.normal();
    }
    const Routing r = route(Tensor::from_vector({tokens_per_step, d_model}, std::move(x)), router, sim.final_state, cfg);
    sim.loads.push_back(r.loads);
    sim.final_state = update_balance(sim.final_state, r.loads, cfg);
  }
  return sim;
}

}  // namespace hybridlab
