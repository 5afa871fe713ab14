#include <cmath>
#include <sstream>

#include "doctest.h"
#include "hybridlab/cost.hpp"
#include "hybridlab/csv.hpp"
#include "hybridlab/decode.hpp"
#include "hybridlab/layout.hpp"
#include "oracles.hpp"

using namespace hybridlab;

namespace {

double row_diff(const Tensor& full, std::int64_t row, const Tensor& step) {
  const std::int64_t v = step.numel();
  double m = 0.0;
  for (std::int64_t j = 0; j < v; ++j) m = std::max(m, std::abs(full[row * v + j] - step[j]));
  return m;
}

std::vector<BlockKind> all_kinds() { return {BlockKind::kAttn, BlockKind::kSwa, BlockKind::kMamba, BlockKind::kIntra}; }

LayoutSpec two_of(BlockKind k) {
  LayoutSpec l = oracle::single_block(k);
  l.blocks.push_back(l.blocks.front());
  return l;
}

}  // namespace

TEST_SUITE("decode-engine") {
  TEST_CASE("cached decoding equals full forward for every block kind over 128 steps") {
    const ModelConfig c = oracle::tiny_config();
    for (BlockKind k : all_kinds()) {
      const HybridModel m = HybridModel::build(c, two_of(k), 11);
      CounterRng rng(12);
      const auto tokens = oracle::random_tokens(128, c.vocab, rng);
      const Tensor full = m.forward(tokens);
      DecodeState s = DecodeState::empty(m);
      double worst = 0.0;
      for (std::int64_t t = 0; t < 128; ++t) worst = std::max(worst, row_diff(full, t, decode_step(m, s, tokens[t])));
      CHECK_MESSAGE(worst < 1e-8, to_string(k), " worst ", worst);
    }
  }

  TEST_CASE("mixed stack decodes like its full forward") {
    ModelConfig c = oracle::tiny_config();
    LayoutSpec l = plan_layout_counts(2, 2, BlockKind::kIntra, Positioning::kScatter);
    BlockSpec swa{BlockKind::kSwa};
    swa.window = 3;
    swa.sink = 2;
    l.blocks.push_back(swa);
    l.blocks.push_back(BlockSpec{BlockKind::kAttn, std::nullopt, std::nullopt, true});
    const HybridModel m = HybridModel::build(c, l, 13);
    CounterRng rng(14);
    const auto tokens = oracle::random_tokens(40, c.vocab, rng);
    const Tensor full = m.forward(tokens);
    DecodeState s = DecodeState::empty(m);
    for (std::int64_t t = 0; t < 40; ++t) CHECK(row_diff(full, t, decode_step(m, s, tokens[t])) < 1e-8);
  }

  TEST_CASE("prefill of one token equals one step from empty") {
    const ModelConfig c = oracle::tiny_config();
    const HybridModel m = HybridModel::build(c, two_of(BlockKind::kIntra), 15);
    const std::int64_t tok[1] = {5};
    auto [logits, state] = prefill(m, tok);
    DecodeState s = DecodeState::empty(m);
    CHECK(oracle::max_abs_diff(logits, decode_step(m, s, 5)) == 0.0);
    CHECK(state.position == 1);
    CHECK_THROWS_AS(prefill(m, std::span<const std::int64_t>{}), ContractError);
  }

  TEST_CASE("prefill logits match the last full-forward row") {
    const ModelConfig c = oracle::tiny_config();
    for (BlockKind k : all_kinds()) {
      const HybridModel m = HybridModel::build(c, two_of(k), 16);
      CounterRng rng(17);
      const auto prompt = oracle::random_tokens(16, c.vocab, rng);
      auto [logits, state] = prefill(m, prompt);
      CHECK(row_diff(m.forward(prompt), 15, logits) < 1e-8);
    }
  }

  TEST_CASE("greedy generation equals repeated full-forward argmax") {
    const ModelConfig c = oracle::tiny_config();
    LayoutSpec l = plan_layout_counts(1, 2, BlockKind::kAttn, Positioning::kScatter);
    const HybridModel m = HybridModel::build(c, l, 18);
    std::vector<std::int64_t> seq = {1, 2, 3};
    const auto gen = greedy_generate(m, seq, 32);
    for (std::int64_t i = 0; i < 32; ++i) {
      const Tensor full = m.forward(seq);
      const std::int64_t next = argmax_row(full, static_cast<std::int64_t>(seq.size()) - 1);
      CHECK(gen[i] == next);
      seq.push_back(next);
    }
  }

  TEST_CASE("rolling cache holds exactly window plus sink entries") {
    const ModelConfig c = oracle::tiny_config();
    const HybridModel m = HybridModel::build(c, oracle::single_block(BlockKind::kSwa), 19);
    DecodeState s = DecodeState::empty(m);
    const std::int64_t cap = c.window + c.sink;
    for (std::int64_t t = 0; t < cap + 5; ++t) decode_step(m, s, t % c.vocab);
    const auto& cache = std::get<RollingKvCache>(s.caches[0]);
    CHECK(cache.length() == cap);
    CHECK(cache.filled() == cap + 5);
  }

  TEST_CASE("measured state bytes follow the cache formulas") {
    const ModelConfig c = oracle::tiny_config();
    for (BlockKind k : all_kinds()) {
      const HybridModel m = HybridModel::build(c, oracle::single_block(k), 20);
      DecodeState s = DecodeState::empty(m);
      for (std::int64_t t = 1; t <= 20; ++t) {
        decode_step(m, s, t % c.vocab);
        CHECK_MESSAGE(s.state_bytes() == block_cache_bytes(m.layout.blocks[0], c, t), to_string(k), " t=", t);
      }
    }
  }

  TEST_CASE("mamba state is position independent") {
    const ModelConfig c = oracle::tiny_config();
    const HybridModel m = HybridModel::build(c, two_of(BlockKind::kMamba), 21);
    CounterRng rng(22);
    const auto a = prefill(m, oracle::random_tokens(16, c.vocab, rng));
    const auto b = prefill(m, oracle::random_tokens(1600, c.vocab, rng));
    CHECK(a.second.state_bytes() == b.second.state_bytes());
  }

  TEST_CASE("changing a token never alters earlier logits") {
    const ModelConfig c = oracle::tiny_config();
    for (BlockKind k : all_kinds()) {
      const HybridModel m = HybridModel::build(c, two_of(k), 23);
      CounterRng rng(24);
      auto tokens = oracle::random_tokens(24, c.vocab, rng);
      const Tensor base = m.forward(tokens);
      for (std::int64_t p : {0, 7, 15, 23}) {
        auto mutated = tokens;
        mutated[p] = (mutated[p] + 1) % c.vocab;
        const Tensor out = m.forward(mutated);
        const std::int64_t v = c.vocab;
        bool same_before = true, changed_at = false;
        for (std::int64_t i = 0; i < 24 * v; ++i) {
          if (i < p * v) same_before = same_before && out[i] == base[i];
          else if (i < (p + 1) * v) changed_at = changed_at || out[i] != base[i];
        }
        CHECK_MESSAGE(same_before, to_string(k), " p=", p);
        CHECK(changed_at);
      }
    }
  }

  TEST_CASE("contract errors") {
    const ModelConfig c = oracle::tiny_config();
    const HybridModel m = HybridModel::build(c, oracle::single_block(BlockKind::kAttn), 25);
    DecodeState s = DecodeState::empty(m, 2);
    decode_step(m, s, 1);
    decode_step(m, s, 1);
    CHECK_THROWS_AS(decode_step(m, s, 1), ContractError);
    DecodeState fresh = DecodeState::empty(m);
    CHECK_THROWS_AS(decode_step(m, fresh, c.vocab), DimensionError);
    const HybridModel other = HybridModel::build(c, two_of(BlockKind::kAttn), 25);
    CHECK_THROWS_AS(decode_step(other, fresh, 1), ContractError);
  }

  TEST_CASE("analytic traces: constant, affine and additive") {
    const ModelConfig c = hybrid_config("1b");
    const auto mamba = decode_trace(plan_layout(6, {0, 1}, BlockKind::kAttn, Positioning::kScatter), c, 8, 20);
    for (const auto& r : mamba) {
      CHECK(r.ops == mamba[0].ops);
      CHECK(r.state_bytes == mamba[0].state_bytes);
    }
    const auto attn = decode_trace(plan_layout(6, {1, 0}, BlockKind::kAttn, Positioning::kScatter), c, 8, 20);
    const double slope = attn[1].ops - attn[0].ops;
    CHECK(slope > 0);
    for (std::size_t s = 0; s < attn.size(); ++s) CHECK(attn[s].ops == doctest::Approx(attn[0].ops + slope * s).epsilon(1e-14));

    const auto inter = decode_trace(plan_layout_counts(1, 5, BlockKind::kAttn, Positioning::kScatter), c, 8, 20);
    for (std::size_t s = 0; s < inter.size(); ++s) {
      CHECK(inter[s].ops == doctest::Approx(attn[s].ops / 6.0 + 5.0 * mamba[s].ops / 6.0).epsilon(1e-14));
      CHECK(inter[s].state_bytes * 6 == attn[s].state_bytes + 5 * mamba[s].state_bytes);
    }
  }

  TEST_CASE("measured trace agrees with the analytic trace") {
    const Preset p = preset("toy-inter");
    const HybridModel m = HybridModel::build(p.model, p.layout, 26);
    const auto measured = measure_decode(m, 5, 12, 3);
    const auto analytic = decode_trace(p.layout, p.model, 5, 12);
    REQUIRE(measured.size() == analytic.size());
    for (std::size_t i = 0; i < measured.size(); ++i) {
      CHECK(measured[i].state_bytes == analytic[i].state_bytes);
      CHECK(measured[i].ops == analytic[i].ops);
    }
    std::ostringstream os;
    write_decode_csv(os, measured, "{}");
    std::istringstream is(os.str());
    const CsvTable t = read_csv(is);
    CHECK(t.header == std::vector<std::string>{"step", "ops", "state_bytes"});
    CHECK(t.rows.size() == 12);
  }
}
