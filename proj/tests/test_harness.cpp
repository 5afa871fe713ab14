#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "doctest.h"
#include "hybridlab/csv.hpp"
#include "hybridlab/harness.hpp"
#include "oracles.hpp"

using namespace hybridlab;

namespace {

std::vector<std::vector<double>> snapshot(HybridModel& m) {
  std::vector<std::vector<double>> out;
  for (Tensor* t : m.parameters()) out.emplace_back(t->data().begin(), t->data().end());
  return out;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("copy samples repeat their content after the separator") {
    CounterRng rng(1);
    const Sample s = copy_sample(32, 64, rng);
    REQUIRE(s.inputs.size() == 64);
    REQUIRE(s.targets.size() == 64);
    CHECK(s.inputs[32] == kCopySeparator);
    for (int i = 0; i < 32; ++i) {
      CHECK(s.inputs[i] >= 1);
      CHECK(s.inputs[i] < 32);
      CHECK(s.targets[i] == -1);
    }
    for (int i = 32; i < 64; ++i) CHECK(s.targets[i] == s.inputs[i - 32]);
    for (int i = 33; i < 64; ++i) CHECK(s.inputs[i] == s.inputs[i - 33]);
    CHECK_THROWS_AS(copy_sample(32, 63, rng), ContractError);
    CHECK(copy_batch(32, 16, 3, 9)[2].inputs == copy_batch(32, 16, 3, 9)[2].inputs);
  }

  TEST_CASE("needle batches are deterministic and respect depth") {
    NeedleTask t;
    t.seed = 4;
    t.depth_fraction = 0.0;
    const NeedleBatch a = gen_needle_batch(t, 8), b = gen_needle_batch(t, 8);
    for (int i = 0; i < 8; ++i) CHECK(a.samples[i].inputs == b.samples[i].inputs);
    for (const auto& s : a.samples) {
      CHECK(s.inputs.size() == static_cast<std::size_t>(t.context_len - 1));
      CHECK(s.inputs[0] >= 1);
      CHECK(s.inputs[0] <= t.n_keys());
    }
    t.depth_fraction = 1.0;
    const NeedleBatch end = gen_needle_batch(t, 4);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& in = end.samples[i].inputs;
      const std::int64_t q = t.context_len - 1 - t.key_len - t.value_len;
      CHECK(in[q] == kQueryToken);
      CHECK(in[q - t.key_len - t.value_len] == end.keys[i][0]);
    }
    NeedleTask small;
    small.context_len = 6;
    CHECK_THROWS_AS(gen_needle_batch(small, 1), ContractError);
  }

  TEST_CASE("targets are exactly the queried value positions") {
    NeedleTask t;
    t.context_len = 40;
    t.value_len = 3;
    t.seed = 5;
    const NeedleBatch b = gen_needle_batch(t, 16);
    for (std::size_t i = 0; i < b.samples.size(); ++i) {
      const Sample& s = b.samples[i];
      std::vector<std::int64_t> scored;
      for (std::size_t p = 0; p < s.targets.size(); ++p)
        if (s.targets[p] >= 0) scored.push_back(static_cast<std::int64_t>(p));
      REQUIRE(scored.size() == 3);
      CHECK(scored.back() == static_cast<std::int64_t>(s.targets.size()) - 1);
      std::vector<std::int64_t> got;
      for (auto p : scored) got.push_back(s.targets[p]);
      CHECK(got == b.values[i]);
    }
  }

  TEST_CASE("rule-based extractor recovers every planted needle") {
    for (double depth : {0.0, 0.1, 0.37, 0.5, 0.9, 1.0}) {
      for (std::int64_t len : {16, 33, 64, 128}) {
        NeedleTask t;
        t.context_len = len;
        t.depth_fraction = depth;
        t.seed = static_cast<std::uint64_t>(len * 7 + depth * 100);
        const NeedleBatch b = gen_needle_batch(t, 20);
        for (std::size_t i = 0; i < 20; ++i) CHECK(extract_needle(b.samples[i], t) == b.values[i]);
      }
    }
  }

  TEST_CASE("multi-needle samples have distinct keys and score every query") {
    CounterRng rng(6);
    for (std::int64_t n = 1; n <= 4; ++n) {
      const Sample s = multi_needle_sample(32, 64, n, rng);
      CHECK(s.inputs.size() == 63);
      std::int64_t queries = 0, scored = 0;
      for (auto t : s.inputs) queries += t == kQueryToken;
      for (auto t : s.targets) scored += t >= 0;
      CHECK(queries == n);
      CHECK(scored == 2 * n);
    }
    CHECK_THROWS_AS(multi_needle_sample(32, 64, 5, rng), ContractError);
  }

  TEST_CASE("untrained model sits at the uniform baseline") {
    const Preset p = preset("toy-inter");
    const HybridModel m = HybridModel::build(p.model, p.layout, 7);
    CounterRng rng(8);
    const auto stream = oracle::random_tokens(513, 32, rng);
    const auto buckets = positionwise_nll(m, stream, 128, 256);
    REQUIRE(buckets.size() == 4);
    for (const auto& b : buckets) CHECK(std::abs(b.mean_nll / std::log(32.0) - 1.0) < 0.02);
    CHECK_FALSE(buckets[1].extrapolated);
    CHECK(buckets[2].extrapolated);
    const auto one = positionwise_nll(m, stream, 512);
    REQUIRE(one.size() == 1);
    double mean = 0;
    for (const auto& b : buckets) mean += b.mean_nll / 4.0;
    CHECK(one[0].mean_nll == doctest::Approx(mean).epsilon(1e-12));
    CHECK_THROWS_AS(positionwise_nll(m, stream, 1000), ContractError);
  }

  TEST_CASE("untrained retrieval is near chance") {
    const Preset p = preset("toy-intra");
    const HybridModel m = HybridModel::build(p.model, p.layout, 9);
    const NiahGrid g = niah_eval(m, {0.0, 0.5, 1.0}, {32, 48}, 10, 3);
    CHECK(g.accuracy.size() == 2);
    for (const auto& row : g.accuracy) {
      CHECK(row.size() == 3);
      for (double a : row) CHECK(a <= 0.2);
    }
  }

  TEST_CASE("niah grid csv round trip") {
    NiahGrid g{{0.0, 0.25, 1.0}, {32, 64}, {{1.0, 0.95, 0.5}, {0.1, 0.0, 1.0 / 3.0}}};
    std::ostringstream os;
    write_niah_csv(os, g, R"({"seed":1})");
    std::istringstream is(os.str());
    const NiahGrid back = read_niah_csv(is);
    CHECK(back.depths == g.depths);
    CHECK(back.lengths == g.lengths);
    CHECK(back.accuracy == g.accuracy);
    std::istringstream bad("#hybridlab-csv-v1\ndepth,0\n");
    CHECK_THROWS(read_niah_csv(bad));
  }

  TEST_CASE("zero learning rate leaves parameters unchanged") {
    const Preset p = preset("toy-inter");
    HybridModel m = HybridModel::build(p.model, p.layout, 10);
    const auto before = snapshot(m);
    TrainConfig c;
    c.steps = 5;
    c.peak_lr = 0.0;
    const auto trace = train(m, copy_source(32, 16, 2, 1), c);
    CHECK(snapshot(m) == before);
    TrainConfig fixed = c;
    const auto same = train(m, [](std::int64_t) { return copy_batch(32, 16, 2, 4); }, fixed);
    for (const auto& s : same) CHECK(s.loss == same[0].loss);
    CHECK(trace.size() == 5);
  }

  TEST_CASE("schedule is trapezoidal with the configured phases") {
    TrainConfig c;
    c.steps = 100;
    c.peak_lr = 2e-3;
    c.warmup_frac = 0.25;
    c.cooldown_frac = 0.2;
    const TrapezoidSchedule s = c.schedule();
    CHECK(s.warmup_steps == 25);
    CHECK(s.cooldown_steps == 20);
    for (std::int64_t i = 0; i < 25; ++i) CHECK(s.at(i) == doctest::Approx(2e-3 * (i + 1) / 25.0));
    for (std::int64_t i = 25; i < 80; ++i) CHECK(s.at(i) == 2e-3);
    for (std::int64_t i = 80; i < 100; ++i) CHECK(s.at(i) == doctest::Approx(2e-3 * (100 - i) / 20.0));
    c.warmup_frac = 0.9;
    CHECK_THROWS_AS(c.validate(), ContractError);
  }

  TEST_CASE("training is deterministic and reduces loss") {
    const Preset p = preset("toy-llama");
    TrainConfig c;
    c.steps = 200;
    c.batch = 4;
    c.peak_lr = 3e-3;
    HybridModel a = HybridModel::build(p.model, p.layout, 11), b = HybridModel::build(p.model, p.layout, 11);
    const auto ta = train(a, copy_source(32, 16, 4, 3), c), tb = train(b, copy_source(32, 16, 4, 3), c);
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
      CHECK(ta[i].loss == tb[i].loss);
      CHECK(ta[i].grad_norm == tb[i].grad_norm);
    }
    CHECK(snapshot(a) == snapshot(b));
    const auto mean_loss = [&](std::size_t from, std::size_t to) {
      double sum = 0.0;
      for (std::size_t i = from; i < to; ++i) sum += ta[i].loss;
      return sum / static_cast<double>(to - from);
    };
    CHECK(mean_loss(ta.size() - 10, ta.size()) < mean_loss(0, 10) - 0.2);
  }

  TEST_CASE("divergence aborts with a diagnostic") {
    const Preset p = preset("toy-mamba");
    HybridModel m = HybridModel::build(p.model, p.layout, 12);
    m.head.mutable_data()[0] = std::numeric_limits<double>::infinity();
    TrainConfig c;
    c.steps = 3;
    try {
      train(m, copy_source(32, 16, 2, 3), c);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
  }

  TEST_CASE("every parameter receives gradient after one step") {
    const ModelConfig cfg = oracle::tiny_config();
    for (BlockKind k : {BlockKind::kAttn, BlockKind::kSwa, BlockKind::kMamba, BlockKind::kIntra}) {
      HybridModel m = HybridModel::build(cfg, oracle::single_block(k), 13);
      m.set_requires_grad(true);
      CounterRng rng(14);
      Sample s;
      s.inputs = oracle::random_tokens(12, cfg.vocab, rng);
      s.targets = oracle::random_tokens(12, cfg.vocab, rng);
      GradTape tape;
      tape.backward(batch_loss(m, {s}).loss);
      for (auto& [name, t] : m.named()) {
        double g = 0;
        for (double v : t->grad()) g += std::abs(v);
        CHECK_MESSAGE(g > 0, to_string(k), " ", name);
      }
    }
  }

  TEST_CASE("train csv format") {
    std::ostringstream os;
    write_train_csv(os, {{0, 1e-3, 3.4, 0.1, 2.0}}, "{}");
    std::istringstream is(os.str());
    const CsvTable t = read_csv(is);
    CHECK(t.header == std::vector<std::string>{"step", "lr", "loss", "accuracy", "grad_norm"});
    CHECK(t.rows.at(0).at(2) == "3.4");
  }

  TEST_CASE("corpus readers") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto ids = dir / "hybridlab_ids.txt", bytes = dir / "hybridlab_bytes.bin";
    std::ofstream(ids) << "3 4\n5\n\n6\n";
    std::ofstream(bytes, std::ios::binary) << "AB\xff";
    CHECK(read_token_ids(ids.string()) == std::vector<std::int64_t>{3, 4, 5, 6});
    CHECK(read_token_bytes(bytes.string()) == std::vector<std::int64_t>{65, 66, 255});
    std::ofstream(ids) << "3 x\n";
    CHECK_THROWS(read_token_ids(ids.string()));
    CHECK_THROWS(read_token_ids((dir / "hybridlab_missing.txt").string()));
    std::filesystem::remove(ids);
    std::filesystem::remove(bytes);
    const auto src = stream_source({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 4, 3, 1);
    for (const auto& s : src(0)) {
      CHECK(s.inputs.size() == 4);
      for (std::size_t i = 0; i < 4; ++i) CHECK(s.targets[i] == s.inputs[i] + 1);
    }
  }
}
