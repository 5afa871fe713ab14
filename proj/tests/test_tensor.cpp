#include <cmath>

#include "doctest.h"
#include "hybridlab/ops.hpp"
#include "hybridlab/rng.hpp"
#include "hybridlab/verify.hpp"
#include "oracles.hpp"

using namespace hybridlab;

TEST_SUITE("tensor-core") {
  TEST_CASE("shape and data length agree; bad shapes rejected") {
    const Tensor t = Tensor::zeros({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.data().size() == 24);
    CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1, 2, 3}), DimensionError);
  }

  TEST_CASE("matmul hand cases and triple-loop oracle") {
    const Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
    const Tensor eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
    CHECK(oracle::vec(matmul(eye, a)) == oracle::vec(a));
    const Tensor col = Tensor::from_vector({2, 1}, {0, 1});
    CHECK(oracle::vec(matmul(a, col)) == std::vector<double>{2, 4});

    CounterRng rng(11);
    const Tensor x = randn({5, 7}, rng), y = randn({7, 3}, rng);
    const auto want = oracle::naive_matmul(oracle::vec(x), oracle::vec(y), 5, 7, 3);
    CHECK(oracle::max_abs_diff(matmul(x, y), want) < 1e-12);
    CHECK_THROWS_AS(matmul(x, x), DimensionError);
  }

  TEST_CASE("softmax symmetry, stability and direct oracle") {
    const Tensor u = softmax_lastdim(Tensor::from_vector({3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const Tensor big = softmax_lastdim(Tensor::from_vector({2}, {1000, 0}));
    CHECK(std::abs(big[0] - 1.0) < 1e-12);
    CHECK(std::abs(big[1]) < 1e-12);
    const Tensor s = softmax_lastdim(Tensor::from_vector({3}, {1, 2, 3}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(s[i] - std::exp(i + 1.0) / z) < 1e-15);
  }

  TEST_CASE("backward of sum and sum of squares") {
    Tensor x = Tensor::from_vector({4}, {1, -2, 3, 0.5});
    x.set_requires_grad(true);
    {
      GradTape tape;
      tape.backward(sum(x));
    }
    CHECK(x.grad() == std::vector<double>{1, 1, 1, 1});
    x.zero_grad();
    {
      GradTape tape;
      tape.backward(sum(mul(x, x)));
    }
    CHECK(x.grad() == std::vector<double>{2, -4, 6, 1});
  }

  TEST_CASE("matmul + softmax chain agrees with central differences") {
    CounterRng rng(3);
    Tensor a = randn({3, 4}, rng), b = randn({4, 5}, rng);
    const Tensor w = randn({3, 5}, rng);
    const auto r = grad_check([&] { return sum(mul(softmax_lastdim(matmul(a, b)), w)); }, {{"a", &a}, {"b", &b}}, 1e-4);
    CHECK(r.checked == 32);
    CHECK(r.max_rel_error < 1e-4);
  }

  TEST_CASE("each node runs once; a tape replays once") {
    Tensor x = Tensor::from_vector({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    GradTape tape;
    const Tensor y = mul(x, x);
    const Tensor loss = sum(add(y, y));
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{4, 8});
    CHECK_THROWS_AS(tape.backward(loss), ContractError);
  }

  TEST_CASE("non-scalar loss is a contract error") {
    Tensor x = Tensor::from_vector({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    GradTape tape;
    CHECK_THROWS_AS(tape.backward(mul(x, x)), ContractError);
  }

  TEST_CASE("non-finite results raise NumericError") {
    CHECK_THROWS_AS(exponential(Tensor::from_vector({1}, {1e6})), NumericError);
  }

  TEST_CASE("single precision rounds each op result") {
    const Tensor a = Tensor::from_vector({1}, {1.0}), b = Tensor::from_vector({1}, {1e-10});
    CHECK(add(a, b)[0] != 1.0);
    PrecisionScope single(Precision::kSingle);
    CHECK(add(a, b)[0] == 1.0);
  }

  TEST_CASE("broadcast multiply aligns trailing axes") {
    const Tensor x = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor w = Tensor::from_vector({3}, {1, 10, 100});
    CHECK(oracle::vec(broadcast_mul(x, w)) == std::vector<double>{1, 20, 300, 4, 50, 600});
    CHECK_THROWS_AS(broadcast_mul(x, Tensor::from_vector({2}, {1, 2})), DimensionError);
  }

  TEST_CASE("cross entropy ignores negative targets") {
    const Tensor logits = Tensor::from_vector({2, 3}, {0, 0, 0, 5, 0, 0});
    const std::vector<std::int64_t> t{1, -1};
    CHECK(cross_entropy(logits, t).item() == doctest::Approx(std::log(3.0)));
  }
}
