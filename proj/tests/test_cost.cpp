#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "hybridlab/cost.hpp"
#include "hybridlab/csv.hpp"
#include "hybridlab/layout.hpp"
#include "hybridlab/model.hpp"
#include "oracles.hpp"

using namespace hybridlab;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

double mib(std::int64_t bytes) { return static_cast<double>(bytes) / (1024.0 * 1024.0); }

// Conv buffer of N_conv entries over d_ssm + 2 d_state channels plus the d_ssm x d_state memory, 2 bytes each.
std::int64_t mamba_cache_oracle(std::int64_t d_ssm, std::int64_t d_state, std::int64_t n_conv) {
  return 2 * (n_conv * (d_ssm + 2 * d_state) + d_ssm * d_state);
}

}  // namespace

TEST_SUITE("cost-model") {
  TEST_CASE("cache goldens at 8192") {
    const auto bytes = [](const char* name) {
      const Preset p = preset(name);
      return cost_report(p.layout, p.model, 8192, 60e9).cache_bytes;
    };
    CHECK(bytes("llama-1b") == 268435456);
    CHECK(bytes("llama-1b") == 16 * 4 * 64 * 8 * 8192);
    CHECK(bytes("mamba-1b") == 13 * mamba_cache_oracle(4096, 128, 4));
    CHECK(std::abs(mib(bytes("mamba-1b")) - 13.4) <= 0.1);
    CHECK(std::abs(mib(bytes("swa-1b")) - 63.0) <= 1.0);
    CHECK(bytes("swa-1b") == 3 * 4 * 64 * 8 * 8192 + 13 * 4 * 64 * 8 * (512 + 64));
    CHECK(std::abs(mib(bytes("inter-1b")) - 43.0) <= 1.0);
    CHECK(bytes("inter-1b") == 2 * 4 * 64 * 8 * 8192 + 11 * mamba_cache_oracle(4096, 128, 4));
    CHECK(std::abs(mib(bytes("intra-1b")) - 38.0) <= 2.0);
  }

  TEST_CASE("training FLOP goldens at 60e9 tokens") {
    const std::pair<const char*, double> rows[] = {
        {"llama-1b", 4.5e20}, {"mamba-1b", 3.7e20}, {"swa-1b", 3.8e20}, {"inter-1b", 3.7e20}, {"intra-1b", 3.7e20}};
    for (auto [name, want] : rows) {
      const Preset p = preset(name);
      CHECK_MESSAGE(rel(train_flops_total(p.layout, p.model, 8192, 60e9), want) < 0.03, name);
    }
  }

  TEST_CASE("closed forms evaluated directly") {
    const ModelConfig llama = preset("llama-1b").model;
    const BlockSpec attn{BlockKind::kAttn};
    CHECK(block_params(attn, llama).mixer == 10485760);
    CHECK(attention_params_closed_form(llama) == 2 * 2048 * 2048 + 2 * 2048 * 64 * 8);
    // 16 layers of 12 d L (L+1)/2 at d = 2048, L = 8192
    double extra = 0;
    for (int i = 0; i < 16; ++i) extra += block_flops_extra(attn, llama, 8192);
    CHECK(rel(extra, 16 * 12.0 * 2048 * 8192.0 * 8193.0 / 2.0) < 1e-12);
    CHECK(rel(extra, 1.32e13) < 0.01);

    const ModelConfig mamba = preset("mamba-1b").model;
    const BlockSpec m{BlockKind::kMamba};
    CHECK(rel(block_flops_extra(m, mamba, 1000) / 1000.0, 3.0 * (9.0 * 4096 * 128 + 2.0 * 4096)) < 1e-12);
    CHECK(rel(block_flops_extra(m, mamba, 1) , 1.418e7) < 0.001);
    const auto mp = block_params(m, mamba).mixer;
    CHECK(mp >= 24'000'000);
    CHECK(mp <= 27'000'000);
  }

  TEST_CASE("swa degenerates to full attention") {
    ModelConfig c = preset("llama-1b").model;
    BlockSpec swa{BlockKind::kSwa};
    swa.window = 960;
    swa.sink = 64;
    const BlockSpec full{BlockKind::kAttn};
    CHECK(block_flops_extra(swa, c, 1024) == block_flops_extra(full, c, 1024));
    CHECK(block_cache_bytes(swa, c, 1024) == block_cache_bytes(full, c, 1024));
    CHECK(block_flops_extra(swa, c, 4096) < block_flops_extra(full, c, 4096));
  }

  TEST_CASE("prose claims at 1B and 8K") {
    const Preset llama = preset("llama-1b"), mamba = preset("mamba-1b");
    const auto a = cost_report(llama.layout, llama.model, 8192, 60e9);
    const auto m = cost_report(mamba.layout, mamba.model, 8192, 60e9);
    const double gap = 1.0 - m.flops_per_sample / a.flops_per_sample;
    CHECK(gap >= 0.15);
    CHECK(gap <= 0.20);
    CHECK(static_cast<double>(m.cache_bytes) <= 0.06 * static_cast<double>(a.cache_bytes));
    CHECK(rel(static_cast<double>(a.params_emb), 0.26e9) < 0.02);
  }

  TEST_CASE("monotone in context; mamba cache constant") {
    const ModelConfig c = hybrid_config("1b");
    for (BlockKind k : {BlockKind::kAttn, BlockKind::kSwa, BlockKind::kMamba, BlockKind::kIntra}) {
      BlockSpec b{k};
      std::int64_t prev_cache = -1;
      double prev_flops = -1;
      for (std::int64_t l : {1, 2, 100, 575, 576, 577, 4096, 100000}) {
        const auto cache = block_cache_bytes(b, c, l);
        const double flops = block_flops_per_sample(b, c, l);
        CHECK(cache >= prev_cache);
        CHECK(flops >= prev_flops);
        prev_cache = cache;
        prev_flops = flops;
      }
    }
    const BlockSpec m{BlockKind::kMamba};
    CHECK(block_cache_bytes(m, c, 0) == block_cache_bytes(m, c, 100000));
  }

  TEST_CASE("instantiated weights match accounting for every block kind") {
    const ModelConfig c = oracle::tiny_config();
    for (BlockKind k : {BlockKind::kAttn, BlockKind::kSwa, BlockKind::kMamba, BlockKind::kIntra}) {
      for (bool moe : {false, true}) {
        LayoutSpec l = oracle::single_block(k, moe);
        l.blocks.push_back(l.blocks.front());
        const HybridModel model = HybridModel::build(c, l, 4);
        const CostReport r = cost_report(l, c, 16, 1e6);
        CHECK(model.parameter_count() == r.params_nonemb + r.params_emb + r.params_head);
        std::int64_t sum = c.d_model;
        for (auto p : r.params_per_block) sum += p;
        CHECK(sum == r.params_nonemb);
      }
    }
  }

  TEST_CASE("permuting blocks never changes cost") {
    const ModelConfig c = hybrid_config("1b");
    LayoutSpec l = plan_layout_counts(3, 10, BlockKind::kAttn, Positioning::kScatter);
    l.blocks[1].kind = BlockKind::kSwa;
    l.blocks[1].window = 256;
    l.blocks[1].sink = 16;
    l.blocks[7].kind = BlockKind::kIntra;
    const CostReport base = cost_report(l, c, 2048, 1e9);
    std::mt19937 gen(5);
    for (int trial = 0; trial < 10; ++trial) {
      std::shuffle(l.blocks.begin(), l.blocks.end(), gen);
      const CostReport r = cost_report(l, c, 2048, 1e9);
      CHECK(r.cache_bytes == base.cache_bytes);
      CHECK(r.params_nonemb == base.params_nonemb);
      CHECK(rel(r.flops_per_sample, base.flops_per_sample) < 1e-14);
    }
  }

  TEST_CASE("moe activated parameters count one shared and one routed expert") {
    ModelConfig c = hybrid_config("1b");
    BlockSpec dense{BlockKind::kAttn}, moe{BlockKind::kAttn};
    moe.moe = true;
    const BlockParams p = block_params(moe, c);
    const std::int64_t expert = 3 * c.d_model * c.moe.expert_width(c.d_ffn);
    CHECK(p.ffn - p.ffn_active == (c.moe.n_experts - c.moe.top_k) * expert);
    CHECK(p.ffn_active == c.d_model * c.moe.n_experts + 2 * expert);
    CHECK(block_params(dense, c).ffn == block_params(dense, c).ffn_active);
  }

  TEST_CASE("cost csv carries the versioned header and full precision") {
    const Preset p = preset("llama-1b");
    std::ostringstream os;
    write_cost_csv(os, {cost_report(p.layout, p.model, 8192, 60e9, "llama-1b")}, R"({"preset":"llama-1b"})");
    std::istringstream is(os.str());
    const CsvTable t = read_csv(is);
    CHECK(os.str().rfind(std::string(kCsvMagic), 0) == 0);
    CHECK(t.config_json == R"({"preset":"llama-1b"})");
    CHECK(t.header == cost_csv_columns());
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0][6] == "268435456");
    CHECK(std::stod(t.rows[0][3]) == cost_report(p.layout, p.model, 8192, 60e9).train_flops);
  }

  TEST_CASE("number formatting") {
    CHECK(fmt_sig3(4.4712e20) == "4.47e+20");
    CHECK(fmt_sig3(256.0) == "256");
    CHECK(std::stod(fmt_full(0.1 + 0.2)) == 0.1 + 0.2);
  }
}
