#include <cmath>

#include "doctest.h"
#include "hybridlab/nn.hpp"
#include "hybridlab/ops.hpp"
#include "hybridlab/ssm.hpp"
#include "hybridlab/verify.hpp"
#include "oracles.hpp"

using namespace hybridlab;

namespace {

SsmConfig small_cfg() {
  SsmConfig c;
  c.d_model = 4;
  c.d_ssm = 8;
  c.d_state = 2;
  c.d_head_ssm = 4;
  c.n_conv = 3;
  c.chunk = 4;
  return c;
}

Tensor row(const Tensor& x, std::int64_t t) {
  const std::int64_t d = x.dim(1);
  return Tensor::from_vector({1, d}, {x.data().begin() + t * d, x.data().begin() + (t + 1) * d});
}

}  // namespace

TEST_SUITE("ssm") {
  TEST_CASE("config invariants") {
    SsmConfig c = small_cfg();
    c.d_head_ssm = 3;
    CHECK_THROWS_AS(c.validate(), ContractError);
    c = small_cfg();
    c.n_conv = 0;
    CHECK_THROWS_AS(c.validate(), ContractError);
  }

  TEST_CASE("one step matches a term-by-term evaluation") {
    CounterRng rng(7);
    const SsmConfig c = small_cfg();
    const SsmParams p = SsmParams::init(c, rng);
    const Tensor x = randn({1, 4}, rng);
    const auto proj = oracle::naive_matmul(oracle::vec(x), oracle::vec(p.in_proj), 1, 4, c.in_proj_width());
    const std::int64_t D = 8, N = 2, H = 2, P = 4, Ch = c.conv_channels(), K = c.n_conv;
    std::vector<double> conv(static_cast<std::size_t>(Ch));
    for (std::int64_t j = 0; j < Ch; ++j) conv[j] = oracle::silu(proj[D + j] * p.conv_w[j * K + K - 1] + p.conv_b[j]);
    std::vector<double> y(static_cast<std::size_t>(D));
    for (std::int64_t h = 0; h < H; ++h) {
      const double dt = oracle::softplus(proj[2 * D + 2 * N + h] + p.dt_bias[h]);
      for (std::int64_t i = 0; i < P; ++i) {
        const double xi = conv[h * P + i];
        double acc = 0;
        for (std::int64_t n = 0; n < N; ++n) acc += dt * xi * conv[D + n] * conv[D + N + n];
        y[h * P + i] = acc + p.d_skip[h] * xi;
      }
    }
    double ms = 0;
    for (std::int64_t j = 0; j < D; ++j) {
      y[j] *= oracle::silu(proj[j]);
      ms += y[j] * y[j] / static_cast<double>(D);
    }
    for (std::int64_t j = 0; j < D; ++j) y[j] = y[j] / std::sqrt(ms + kNormEps) * p.norm_w[j];
    const auto want = oracle::naive_matmul(y, oracle::vec(p.out_proj), 1, D, 4);

    SsmState st = SsmState::zeros(c);
    CHECK(oracle::max_abs_diff(ssm_step(st, x, c, p), want) < 1e-12);
    CHECK(oracle::max_abs_diff(ssm_forward(x, c, p), want) < 1e-12);
  }

  TEST_CASE("vanishing step size leaves only the skip path") {
    CounterRng rng(8);
    const SsmConfig c = small_cfg();
    SsmParams p = SsmParams::init(c, rng);
    for (auto& v : p.dt_bias.mutable_data()) v = -200.0;
    const Tensor x = randn({5, 4}, rng);
    const Tensor base = ssm_forward(x, c, p);
    // With dt ~ 0 the state never fills, so B and C cannot matter.
    std::vector<double> w(p.in_proj.data().begin(), p.in_proj.data().end());
    for (std::int64_t r = 0; r < 4; ++r)
      for (std::int64_t j = 16; j < 20; ++j) w[r * c.in_proj_width() + j] *= -3.0;
    SsmParams q = p;
    q.in_proj = Tensor::from_vector(p.in_proj.shape(), w);
    CHECK(oracle::max_abs_diff(ssm_forward(x, c, q), base) < 1e-12);
  }

  TEST_CASE("chunk sizes agree with the step fold") {
    CounterRng rng(9);
    const std::int64_t L = 32, H = 2, P = 3, G = 1, N = 4;
    const Tensor x = randn({L, H, P}, rng), dt = softplus(randn({L, H}, rng));
    const Tensor rate = exponential(randn({H}, rng)), b = randn({L, G, N}, rng), cc = randn({L, G, N}, rng);
    const Tensor d = randn({H}, rng);
    const Tensor ref = selective_scan_sequential(x, dt, rate, b, cc, d);
    CHECK(oracle::max_abs_diff(selective_scan(x, dt, rate, b, cc, d, L), ref) < 1e-10);
    CHECK(oracle::max_abs_diff(selective_scan(x, dt, rate, b, cc, d, 1), ref) < 1e-12);
    for (std::int64_t chunk : {1, 4, 8, 32}) CHECK(oracle::max_abs_diff(selective_scan(x, dt, rate, b, cc, d, chunk), ref) < 1e-9);
  }

  TEST_CASE("property: chunked scan equals step fold on random configurations") {
    CounterRng rng(10);
    for (int trial = 0; trial < 40; ++trial) {
      const std::int64_t L = 1 + rng.below(100), H = 1 + rng.below(4), P = 1 + rng.below(4), N = 1 + rng.below(5);
      const std::int64_t G = rng.below(2) ? H : 1;
      const std::int64_t chunk = 1 + rng.below(40);
      const Tensor x = randn({L, H, P}, rng), dt = softplus(randn({L, H}, rng));
      const Tensor rate = exponential(randn({H}, rng)), b = randn({L, G, N}, rng), cc = randn({L, G, N}, rng);
      const Tensor d = randn({H}, rng);
      CHECK(oracle::max_abs_diff(selective_scan(x, dt, rate, b, cc, d, chunk),
                                 selective_scan_sequential(x, dt, rate, b, cc, d)) < 1e-9);
    }
  }

  TEST_CASE("blelloch scan equals the sequential fold for every length") {
    CounterRng rng(11);
    for (std::size_t n = 0; n < 20; ++n) {
      std::vector<DecayState> items;
      for (std::size_t i = 0; i < n; ++i) items.push_back({rng.uniform(0.2, 1.0), {rng.normal(), rng.normal()}});
      const auto got = blelloch_exclusive_scan(items, 2);
      REQUIRE(got.size() == n);
      DecayState acc{1.0, {0.0, 0.0}};
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(got[i].decay - acc.decay) < 1e-14);
        CHECK(std::abs(got[i].state[0] - acc.state[0]) < 1e-12);
        CHECK(std::abs(got[i].state[1] - acc.state[1]) < 1e-12);
        acc = combine(acc, items[i]);
      }
    }
  }

  TEST_CASE("zero input projection closes the output gate") {
    CounterRng rng(12);
    const SsmConfig c = small_cfg();
    SsmParams p = SsmParams::init(c, rng);
    for (auto& v : p.in_proj.mutable_data()) v = 0.0;
    const Tensor y = ssm_forward(randn({3, 4}, rng), c, p);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
  }

  TEST_CASE("prefix property and recurrent equivalence") {
    CounterRng rng(13);
    const SsmConfig c = small_cfg();
    const SsmParams p = SsmParams::init(c, rng);
    const Tensor x = randn({23, 4}, rng);
    const Tensor full = ssm_forward(x, c, p);
    const Tensor head = ssm_forward(Tensor::from_vector({9, 4}, {x.data().begin(), x.data().begin() + 36}), c, p);
    for (int i = 0; i < 36; ++i) CHECK(std::abs(head[i] - full[i]) < 1e-10);
    SsmState st = SsmState::zeros(c);
    const std::int64_t size = st.element_count();
    double err = 0;
    for (std::int64_t t = 0; t < 23; ++t) {
      const Tensor y = ssm_step(st, row(x, t), c, p);
      for (int j = 0; j < 4; ++j) err = std::max(err, std::abs(y[j] - full[t * 4 + j]));
    }
    CHECK(err < 1e-10);
    CHECK(st.element_count() == size);
    CHECK(st.position == 23);
  }

  TEST_CASE("block gradients") {
    CounterRng rng(14);
    const SsmConfig c = small_cfg();
    SsmParams p = SsmParams::init(c, rng);
    Tensor x = randn({6, 4}, rng);
    const Tensor w = randn({6, 4}, rng);
    std::vector<std::pair<std::string, Tensor*>> params{{"x", &x}};
    const char* names[] = {"in_proj", "conv_w", "conv_b", "a_log", "d_skip", "dt_bias", "norm_w", "out_proj"};
    auto ts = p.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) params.emplace_back(names[i], ts[i]);
    const auto r = grad_check([&] { return sum(mul(ssm_forward(x, c, p), w)); }, params, 1e-5);
    CHECK(r.max_rel_error < 1e-5);
  }
}
