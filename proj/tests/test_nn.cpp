#include <cmath>

#include "doctest.h"
#include "hybridlab/nn.hpp"
#include "hybridlab/ops.hpp"
#include "oracles.hpp"

using namespace hybridlab;

TEST_SUITE("nn-primitives") {
  TEST_CASE("rms norm fixed points and direct oracle") {
    const Tensor ones = Tensor::full({4}, 1.0);
    CHECK(oracle::max_abs_diff(rms_norm(ones, ones), oracle::vec(ones)) < 1e-5);
    CHECK(oracle::max_abs_diff(rms_norm(Tensor::full({4}, 2.0), ones), oracle::vec(ones)) < 1e-5);

    CounterRng rng(1);
    const Tensor x = randn({3, 6}, rng), w = randn({6}, rng);
    const Tensor y = rms_norm(x, w);
    for (int r = 0; r < 3; ++r) {
      double ms = 0;
      for (int j = 0; j < 6; ++j) ms += x[r * 6 + j] * x[r * 6 + j] / 6.0;
      for (int j = 0; j < 6; ++j) CHECK(std::abs(y[r * 6 + j] - x[r * 6 + j] / std::sqrt(ms + kNormEps) * w[j]) < 1e-12);
    }
  }

  TEST_CASE("group norm per head") {
    const Tensor w = Tensor::full({1, 4}, 1.0);
    const Tensor constant = group_norm_per_head(Tensor::full({2, 1, 4}, 3.0), w);
    for (std::int64_t i = 0; i < constant.numel(); ++i) CHECK(constant[i] == 0.0);

    const Tensor pm = group_norm_per_head(Tensor::from_vector({1, 1, 2}, {1, -1}), Tensor::full({1, 2}, 1.0));
    CHECK(pm[0] == doctest::Approx(1.0 / std::sqrt(1.0 + kNormEps)));
    CHECK(pm[1] == doctest::Approx(-1.0 / std::sqrt(1.0 + kNormEps)));

    CounterRng rng(2);
    const Tensor x = randn({5, 3, 8}, rng);
    const Tensor y = group_norm_per_head(x, Tensor::full({3, 8}, 1.0));
    for (int g = 0; g < 15; ++g) {
      double m = 0, v = 0;
      for (int j = 0; j < 8; ++j) m += y[g * 8 + j] / 8.0;
      for (int j = 0; j < 8; ++j) v += (y[g * 8 + j] - m) * (y[g * 8 + j] - m) / 8.0;
      CHECK(std::abs(m) < 1e-6);
      CHECK(std::abs(v - 1.0) < 1e-4);
    }
  }

  TEST_CASE("gated FFN") {
    const FfnConfig cfg{1, 1};
    FfnWeights w{Tensor::full({1, 1}, 1.0), Tensor::full({1, 1}, 1.0), Tensor::full({1, 1}, 0.7)};
    CHECK(siglu_ffn(Tensor::zeros({3, 1}), cfg, w)[0] == 0.0);
    CHECK(siglu_ffn(Tensor::full({1, 1}, 1.0), cfg, w)[0] == doctest::Approx(oracle::silu(1.0) * 0.7));

    CounterRng rng(3);
    const FfnConfig c2{3, 5};
    const FfnWeights w2 = FfnWeights::init(c2, rng);
    const Tensor x = randn({4, 3}, rng);
    const auto g = oracle::naive_matmul(oracle::vec(x), oracle::vec(w2.gate), 4, 3, 5);
    const auto u = oracle::naive_matmul(oracle::vec(x), oracle::vec(w2.up), 4, 3, 5);
    std::vector<double> h(20);
    for (int i = 0; i < 20; ++i) h[i] = oracle::silu(g[i]) * u[i];
    CHECK(oracle::max_abs_diff(siglu_ffn(x, c2, w2), oracle::naive_matmul(h, oracle::vec(w2.down), 4, 5, 3)) < 1e-12);
  }

  TEST_CASE("rope: identity at 0, isometry, trig oracle") {
    CounterRng rng(4);
    const RopeConfig cfg{4, 10000.0};
    const Tensor x = randn({1, 1, 4}, rng);
    CHECK(oracle::vec(apply_rope(x, 0, cfg)) == oracle::vec(x));

    const Tensor many = randn({7, 2, 4}, rng);
    const Tensor r = apply_rope(many, 123, cfg);
    for (int i = 0; i < 7 * 2 * 2; ++i) {
      const double a = std::hypot(many[2 * i], many[2 * i + 1]);
      const double b = std::hypot(r[2 * i], r[2 * i + 1]);
      CHECK(std::abs(a - b) < 1e-10);
    }

    const Tensor one = apply_rope(x, 1, cfg);
    for (int i = 0; i < 2; ++i) {
      const double th = std::pow(10000.0, -2.0 * i / 4.0);
      const double x0 = x[2 * i], x1 = x[2 * i + 1];
      CHECK(std::abs(one[2 * i] - (x0 * std::cos(th) - x1 * std::sin(th))) < 1e-12);
      CHECK(std::abs(one[2 * i + 1] - (x0 * std::sin(th) + x1 * std::cos(th))) < 1e-12);
    }
  }

  TEST_CASE("rope with explicit positions equals offset form") {
    CounterRng rng(5);
    const RopeConfig cfg{8, 500000.0};
    const Tensor x = randn({3, 2, 8}, rng);
    const std::vector<std::int64_t> pos{10, 11, 12};
    CHECK(oracle::max_abs_diff(apply_rope_at(x, pos, cfg), apply_rope(x, 10, cfg)) < 1e-14);
  }
}
