#include "hybridlab/nn.hpp"

#include <cmath>
#include <vector>

#include "hybridlab/ops.hpp"

namespace hybridlab {

void FfnConfig::validate() const {
  if (d_model <= 0 || d_ffn <= 0) throw ContractError("FfnConfig: widths must be positive");
  if (d_ffn < d_model) throw ContractError("FfnConfig: d_ffn must be >= d_model");
}

FfnWeights FfnWeights::init(const FfnConfig& cfg, CounterRng& rng) {
  cfg.validate();
  const double s_in = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  const double s_out = 1.0 / std::sqrt(static_cast<double>(cfg.d_ffn));
  return FfnWeights{randn({cfg.d_model, cfg.d_ffn}, rng, s_in), randn({cfg.d_model, cfg.d_ffn}, rng, s_in),
                    randn({cfg.d_ffn, cfg.d_model}, rng, s_out)};
}

void RopeConfig::validate() const {
  if (head_dim <= 0 || head_dim % 2 != 0) throw DimensionError("RopeConfig: head_dim must be even");
  if (!(base_frequency > 1.0)) throw ContractError("RopeConfig: base_frequency must exceed 1");
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps) {
  if (weight.rank() != 1 || weight.dim(0) != x.dim(-1)) {
    throw DimensionError("rms_norm: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
  }
  return broadcast_mul(rms_normalize(x, eps), weight);
}

Tensor group_norm_per_head(const Tensor& x, const Tensor& weight, double eps) {
  if (x.rank() < 2 || weight.rank() != 2 || weight.dim(0) != x.dim(-2) || weight.dim(1) != x.dim(-1)) {
    throw DimensionError("group_norm_per_head: weight " + shape_str(weight.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  return broadcast_mul(standardize(x, eps), weight);
}

Tensor siglu_ffn(const Tensor& x, const FfnConfig& cfg, const FfnWeights& w) {
  if (x.dim(-1) != cfg.d_model || w.gate.shape() != Shape{cfg.d_model, cfg.d_ffn} ||
      w.up.shape() != Shape{cfg.d_model, cfg.d_ffn} || w.down.shape() != Shape{cfg.d_ffn, cfg.d_model}) {
    throw DimensionError("siglu_ffn: weight shapes do not match FfnConfig");
  }
  return matmul(mul(silu(matmul(x, w.gate)), matmul(x, w.up)), w.down);
}

namespace {

// Shared kernel: rows of x[n_rows, n_heads, d] rotated by angle(position(row)).
Tensor rope_rows(const Tensor& x, std::vector<std::int64_t> positions, const RopeConfig& cfg) {
  cfg.validate();
  const std::int64_t d = x.dim(-1);
  if (d != cfg.head_dim) throw DimensionError("apply_rope: last extent differs from RopeConfig.head_dim");
  const std::int64_t row_width = x.dim(-2) * d;
  const auto n_rows = static_cast<std::int64_t>(positions.size());
  const std::int64_t half = d / 2;
  std::vector<double> inv_freq(static_cast<std::size_t>(half));
  for (std::int64_t i = 0; i < half; ++i) {
    inv_freq[i] = std::pow(cfg.base_frequency, -2.0 * static_cast<double>(i) / static_cast<double>(d));
  }
  // cos/sin table per row
  std::vector<double> cs(static_cast<std::size_t>(n_rows * half));
  std::vector<double> sn(cs.size());
  for (std::int64_t r = 0; r < n_rows; ++r) {
    for (std::int64_t i = 0; i < half; ++i) {
      const double ang = static_cast<double>(positions[r]) * inv_freq[i];
      cs[r * half + i] = std::cos(ang);
      sn[r * half + i] = std::sin(ang);
    }
  }
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::int64_t r = 0; r < n_rows; ++r) {
    for (std::int64_t o = r * row_width; o < (r + 1) * row_width; o += d) {
      for (std::int64_t i = 0; i < half; ++i) {
        const double c = cs[r * half + i];
        const double s = sn[r * half + i];
        const double a = xs[o + 2 * i];
        const double b = xs[o + 2 * i + 1];
        out[o + 2 * i] = a * c - b * s;
        out[o + 2 * i + 1] = a * s + b * c;
      }
    }
  }
  Tensor y = detail::make_result(x.shape(), std::move(out), "apply_rope");
  if (detail::should_record({&x})) {
    detail::attach(y, [x, cs = std::move(cs), sn = std::move(sn), n_rows, row_width, d,
                       half](std::span<const double> g) {
      auto gx = detail::grad_buffer(x);
      for (std::int64_t r = 0; r < n_rows; ++r) {
        for (std::int64_t o = r * row_width; o < (r + 1) * row_width; o += d) {
          for (std::int64_t i = 0; i < half; ++i) {
            const double c = cs[r * half + i];
            const double s = sn[r * half + i];
            const double ga = g[o + 2 * i];
            const double gb = g[o + 2 * i + 1];
            gx[o + 2 * i] += ga * c + gb * s;
            gx[o + 2 * i + 1] += -ga * s + gb * c;
          }
        }
      }
    });
  }
  return y;
}

}  // namespace

Tensor apply_rope(const Tensor& x, std::int64_t start_pos, const RopeConfig& cfg) {
  if (x.rank() != 3 && x.rank() != 4) throw DimensionError("apply_rope: expected [L,N,d] or [B,L,N,d]");
  const std::int64_t batch = x.rank() == 4 ? x.dim(0) : 1;
  const std::int64_t len = x.rank() == 4 ? x.dim(1) : x.dim(0);
  std::vector<std::int64_t> positions;
  positions.reserve(static_cast<std::size_t>(batch * len));
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t l = 0; l < len; ++l) positions.push_back(start_pos + l);
  }
  return rope_rows(x, std::move(positions), cfg);
}

Tensor apply_rope_at(const Tensor& x, std::span<const std::int64_t> positions, const RopeConfig& cfg) {
  if (x.rank() != 3 || x.dim(0) != static_cast<std::int64_t>(positions.size())) {
    throw DimensionError("apply_rope_at: expected x[n, N, d] with n positions");
  }
  return rope_rows(x, std::vector<std::int64_t>(positions.begin(), positions.end()), cfg);
}

Tensor embed(const Tensor& table, std::span<const std::int64_t> tokens) { return take_rows(table, tokens); }

}  // namespace hybridlab
