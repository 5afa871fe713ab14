#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hybridlab/checkpoint.hpp"
#include "hybridlab/csv.hpp"
#include "hybridlab/layout.hpp"
#include "hybridlab/runconfig.hpp"
#include "oracles.hpp"

using namespace hybridlab;

TEST_SUITE("io") {
  TEST_CASE("checkpoint round trip preserves every tensor, router state and meta") {
    ModelConfig c = oracle::tiny_config();
    c.fusion.scalar = ScalarKind::kGate;
    LayoutSpec l = plan_layout_counts(1, 1, BlockKind::kIntra, Positioning::kScatter);
    l.blocks[1].moe = true;
    HybridModel m = HybridModel::build(c, l, 31);
    m.layers[1].router.expert_bias[2] = 0.125;
    m.layers[1].router.load_counts[5] = 17;
    std::stringstream ss;
    save_checkpoint(ss, m, {{"step", 42}});
    LoadedCheckpoint back = load_checkpoint(ss);
    CHECK(back.meta.at("step") == 42);
    CHECK(back.model.layout.blocks == l.blocks);
    CHECK(back.model.cfg.fusion == c.fusion);
    CHECK(back.model.layers[1].router.expert_bias == m.layers[1].router.expert_bias);
    CHECK(back.model.layers[1].router.load_counts == m.layers[1].router.load_counts);
    auto a = m.named(), b = back.model.named();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(oracle::vec(*a[i].second) == oracle::vec(*b[i].second));
    }
    CounterRng rng(1);
    const auto tokens = oracle::random_tokens(9, c.vocab, rng);
    CHECK(oracle::max_abs_diff(m.forward(tokens), back.model.forward(tokens)) == 0.0);
  }

  TEST_CASE("checkpoint file header layout") {
    HybridModel m = HybridModel::build(oracle::tiny_config(), oracle::single_block(BlockKind::kMamba), 2);
    const auto path = std::filesystem::temp_directory_path() / "hybridlab_test.ckpt";
    save_checkpoint(path.string(), m);
    std::ifstream f(path, std::ios::binary);
    char magic[8];
    f.read(magic, 8);
    CHECK(std::string(magic, 8) == "HYBLCKPT");
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    CHECK(version == kCheckpointVersion);
    f.close();
    CHECK(load_checkpoint(path.string()).model.parameter_count() == m.parameter_count());
    std::filesystem::remove(path);
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    HybridModel m = HybridModel::build(oracle::tiny_config(), oracle::single_block(BlockKind::kAttn), 3);
    std::stringstream ss;
    save_checkpoint(ss, m);
    const std::string good = ss.str();
    std::istringstream truncated(good.substr(0, good.size() - 8));
    CHECK_THROWS(load_checkpoint(truncated));
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    std::istringstream bm(bad_magic);
    CHECK_THROWS(load_checkpoint(bm));
    std::string bad_version = good;
    bad_version[8] = 9;
    std::istringstream bv(bad_version);
    CHECK_THROWS(load_checkpoint(bv));
  }

  TEST_CASE("csv reader handles preamble, comments and empty cells") {
    std::ostringstream os;
    write_csv_preamble(os, R"({"a":1})");
    write_csv_row(os, {"x", "y"});
    write_csv_row(os, {"1", ""});
    std::istringstream is(os.str() + "# trailing note\n\n3,4\n");
    const CsvTable t = read_csv(is);
    CHECK(t.config_json == R"({"a":1})");
    CHECK(t.header == std::vector<std::string>{"x", "y"});
    CHECK(t.rows == std::vector<std::vector<std::string>>{{"1", ""}, {"3", "4"}});
    std::istringstream missing("x,y\n1,2\n");
    CHECK_THROWS(read_csv(missing));
  }

  TEST_CASE("run config sections and overrides") {
    RunConfig rc = RunConfig::from_ini_text(
        "[model]\npreset = toy-inter\nd_model = 48\n[layout]\ncounts = 2,4\nkind = intra\npos = sandwich\n"
        "[fusion]\nscalar = gate\n[train]\nsteps = 7\nlr = 0.002\n");
    const ModelConfig c = rc.model();
    CHECK(c.d_model == 48);
    CHECK(c.vocab == 32);
    CHECK(c.fusion.scalar == ScalarKind::kGate);
    const LayoutSpec l = rc.layout();
    CHECK(l.count(BlockKind::kIntra) == 2);
    CHECK(l.depth() == 6);
    CHECK(l.positioning == Positioning::kSandwich);
    CHECK(rc.train().steps == 7);
    CHECK(rc.train().peak_lr == 0.002);
    rc.set("train.steps", "9");
    CHECK(rc.train().steps == 9);
    const auto j = rc.resolved();
    CHECK(j.at("settings").at("train.steps") == "9");
    CHECK(j.at("model").at("d_model") == 48);
  }

  TEST_CASE("run config ratio planning and preset fallback") {
    RunConfig rc;
    rc.set("layout.ratio", "1:5");
    rc.set("layout.depth", "13");
    CHECK(rc.layout().special_indices() == std::vector<std::int64_t>{3, 8});
    RunConfig plain;
    CHECK(plain.layout("toy-swa").blocks == preset("toy-swa").layout.blocks);
    plain.set("layout.moe", "true");
    for (const auto& b : plain.layout("toy-llama").blocks) CHECK(b.moe);
  }

  TEST_CASE("run config rejects unknown keys and malformed values") {
    CHECK_THROWS(RunConfig::from_ini_text("[model]\nwidth = 3\n"));
    CHECK_THROWS(RunConfig::from_ini_text("orphan = 1\n"));
    RunConfig rc;
    rc.set("train.steps", "ten");
    CHECK_THROWS(rc.train());
    RunConfig bad;
    bad.set("model.n_head", "3");
    CHECK_THROWS(bad.model());
    CHECK(run_config_keys().count("fusion.dim_ratio") == 1);
  }
}
