#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hybridlab/config.hpp"
#include "hybridlab/rng.hpp"
#include "hybridlab/tensor.hpp"

namespace oracle {

using hybridlab::Tensor;

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[static_cast<std::size_t>(i)]));
  return m;
}

/// Row-major [m,k] x [k,n] by three explicit loops.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::int64_t m,
                                        std::int64_t k, std::int64_t n) {
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      out[i * n + j] = s;
    }
  return out;
}

inline std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }
inline double softplus(double v) { return v > 30 ? v : std::log1p(std::exp(v)); }

/// Small dims where every block kind and fusion cell is well-formed.
inline hybridlab::ModelConfig tiny_config() {
  hybridlab::ModelConfig c;
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

inline hybridlab::LayoutSpec single_block(hybridlab::BlockKind k, bool moe = false) {
  hybridlab::LayoutSpec l;
  l.special = k;
  hybridlab::BlockSpec b;
  b.kind = k;
  b.moe = moe;
  l.blocks = {b};
  l.n_special = k == hybridlab::BlockKind::kMamba ? 0 : 1;
  l.n_mamba = 1 - l.n_special;
  return l;
}

inline std::vector<std::int64_t> random_tokens(std::int64_t n, std::int64_t vocab, hybridlab::CounterRng& rng) {
  std::vector<std::int64_t> t(static_cast<std::size_t>(n));
  for (auto& v : t) v = rng.below(vocab);
  return t;
}

}  // namespace oracle
