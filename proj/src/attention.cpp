#include "hybridlab/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hybridlab/ops.hpp"

namespace hybridlab {

void AttnConfig::validate() const {
  if (d_model <= 0 || n_head <= 0 || n_kv <= 0 || d_head <= 0 || d_qk <= 0) {
    throw ContractError("AttnConfig: all widths must be positive");
  }
  if (n_head % n_kv != 0) throw ContractError("AttnConfig: n_head must be divisible by n_kv");
  if (d_qk > d_head) throw ContractError("AttnConfig: d_qk must not exceed d_head");
  if (d_qk % 2 != 0) throw ContractError("AttnConfig: d_qk must be even for rotary encoding");
  if (sliding && (sliding->window < 1 || sliding->sink < 0)) {
    throw ContractError("AttnConfig: sliding window needs window >= 1 and sink >= 0");
  }
}

double AttnConfig::score_scale() const { return 1.0 / std::sqrt(static_cast<double>(d_qk)); }

AttnWeights AttnWeights::init(const AttnConfig& cfg, CounterRng& rng, bool with_output) {
  cfg.validate();
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  AttnWeights w;
  w.wq = randn({cfg.d_model, cfg.n_head * cfg.d_qk}, rng, s);
  w.wk = randn({cfg.d_model, cfg.n_kv * cfg.d_qk}, rng, s);
  w.wv = randn({cfg.d_model, cfg.n_kv * cfg.d_head}, rng, s);
  if (with_output) {
    w.wo = randn({cfg.n_head * cfg.d_head, cfg.d_model}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.n_head * cfg.d_head)));
  }
  return w;
}

std::vector<std::int64_t> swa_mask(std::int64_t t, std::int64_t length, std::int64_t window, std::int64_t sink) {
  if (window < 1) throw ContractError("swa_mask: window must be >= 1");
  if (sink < 0) throw ContractError("swa_mask: sink must be >= 0");
  if (t < 0 || t >= length) throw ContractError("swa_mask: position outside sequence");
  const std::optional<SlidingWindow> sw = SlidingWindow{window, sink};
  std::vector<std::int64_t> out;
  for (std::int64_t p = 0; p <= t; ++p) {
    if (is_visible(t, p, sw)) out.push_back(p);
  }
  return out;
}

namespace {

struct CoreDims {
  std::int64_t batch, len, hq, hkv, dqk, dv;
};

CoreDims core_dims(const Tensor& q, const Tensor& k, const Tensor* v) {
  if (q.rank() != 4 || k.rank() != 4 || (v && v->rank() != 4)) {
    throw DimensionError("attention_core: expected rank-4 [B,L,H,d] inputs");
  }
  CoreDims d{q.dim(0), q.dim(1), q.dim(2), k.dim(2), q.dim(3), v ? v->dim(3) : 0};
  if (k.dim(0) != d.batch || k.dim(1) != d.len || k.dim(3) != d.dqk) {
    throw DimensionError("attention_core: key shape " + shape_str(k.shape()) + " vs query " + shape_str(q.shape()));
  }
  if (v && (v->dim(0) != d.batch || v->dim(1) != d.len || v->dim(2) != d.hkv)) {
    throw DimensionError("attention_core: value shape " + shape_str(v->shape()));
  }
  if (d.hkv <= 0 || d.hq % d.hkv != 0) throw DimensionError("attention_core: query heads not a multiple of kv heads");
  return d;
}

// probs laid out [B, Hq, L, L], zero where masked.
std::vector<double> compute_probs(const Tensor& q, const Tensor& k, const CoreDims& d,
                                  const std::optional<SlidingWindow>& sw, double scale) {
  const std::int64_t group = d.hq / d.hkv;
  const double* qp = q.data().data();
  const double* kp = k.data().data();
  std::vector<double> probs(static_cast<std::size_t>(d.batch * d.hq * d.len * d.len), 0.0);
  std::vector<double> row(static_cast<std::size_t>(d.len));
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t h = 0; h < d.hq; ++h) {
      const std::int64_t g = h / group;
      for (std::int64_t t = 0; t < d.len; ++t) {
        const double* qv = qp + ((b * d.len + t) * d.hq + h) * d.dqk;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t s = 0; s <= t; ++s) {
          if (!is_visible(t, s, sw)) continue;
          const double* kv = kp + ((b * d.len + s) * d.hkv + g) * d.dqk;
          double acc = 0.0;
          for (std::int64_t c = 0; c < d.dqk; ++c) acc += qv[c] * kv[c];
          row[s] = acc * scale;
          mx = std::max(mx, row[s]);
        }
        if (!std::isfinite(mx)) throw NumericError("attention_core: non-finite scores");
        double z = 0.0;
        double* prow = probs.data() + ((b * d.hq + h) * d.len + t) * d.len;
        for (std::int64_t s = 0; s <= t; ++s) {
          if (!is_visible(t, s, sw)) continue;
          prow[s] = std::exp(row[s] - mx);
          z += prow[s];
        }
        for (std::int64_t s = 0; s <= t; ++s) prow[s] /= z;
      }
    }
  }
  return probs;
}

Tensor as_batched(const Tensor& x, std::int64_t& batch, std::int64_t& len) {
  if (x.rank() == 2) {
    batch = 1;
    len = x.dim(0);
    return x;
  }
  if (x.rank() == 3) {
    batch = x.dim(0);
    len = x.dim(1);
    return x;
  }
  throw DimensionError("attention: expected input [L,d] or [B,L,d], got " + shape_str(x.shape()));
}

}  // namespace

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, const std::optional<SlidingWindow>& sw,
                      double scale) {
  const CoreDims d = core_dims(q, k, &v);
  const std::int64_t group = d.hq / d.hkv;
  std::vector<double> probs = compute_probs(q, k, d, sw, scale);
  const double* vp = v.data().data();
  std::vector<double> out(static_cast<std::size_t>(d.batch * d.len * d.hq * d.dv), 0.0);
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t h = 0; h < d.hq; ++h) {
      const std::int64_t g = h / group;
      for (std::int64_t t = 0; t < d.len; ++t) {
        const double* prow = probs.data() + ((b * d.hq + h) * d.len + t) * d.len;
        double* orow = out.data() + ((b * d.len + t) * d.hq + h) * d.dv;
        for (std::int64_t s = 0; s <= t; ++s) {
          if (prow[s] == 0.0) continue;
          const double* vv = vp + ((b * d.len + s) * d.hkv + g) * d.dv;
          for (std::int64_t c = 0; c < d.dv; ++c) orow[c] += prow[s] * vv[c];
        }
      }
    }
  }
  Tensor y = detail::make_result({d.batch, d.len, d.hq, d.dv}, std::move(out), "attention_core");
  if (detail::should_record({&q, &k, &v})) {
    detail::attach(y, [q, k, v, d, group, scale, probs = std::move(probs)](std::span<const double> g) {
      const double* qp = q.data().data();
      const double* kp = k.data().data();
      const double* vp = v.data().data();
      std::vector<double> gq(q.requires_grad() ? q.numel() : 0, 0.0);
      std::vector<double> gk(k.requires_grad() ? k.numel() : 0, 0.0);
      std::vector<double> gv(v.requires_grad() ? v.numel() : 0, 0.0);
      std::vector<double> dp(static_cast<std::size_t>(d.len));
      for (std::int64_t b = 0; b < d.batch; ++b) {
        for (std::int64_t h = 0; h < d.hq; ++h) {
          const std::int64_t kvh = h / group;
          for (std::int64_t t = 0; t < d.len; ++t) {
            const double* prow = probs.data() + ((b * d.hq + h) * d.len + t) * d.len;
            const double* go = g.data() + ((b * d.len + t) * d.hq + h) * d.dv;
            double pdp = 0.0;
            for (std::int64_t s = 0; s <= t; ++s) {
              if (prow[s] == 0.0) {
                dp[s] = 0.0;
                continue;
              }
              const std::int64_t voff = ((b * d.len + s) * d.hkv + kvh) * d.dv;
              double acc = 0.0;
              for (std::int64_t c = 0; c < d.dv; ++c) acc += go[c] * vp[voff + c];
              dp[s] = acc;
              pdp += prow[s] * acc;
              if (!gv.empty()) {
                for (std::int64_t c = 0; c < d.dv; ++c) gv[voff + c] += prow[s] * go[c];
              }
            }
            const std::int64_t qoff = ((b * d.len + t) * d.hq + h) * d.dqk;
            for (std::int64_t s = 0; s <= t; ++s) {
              if (prow[s] == 0.0) continue;
              const double ds = prow[s] * (dp[s] - pdp) * scale;
              const std::int64_t koff = ((b * d.len + s) * d.hkv + kvh) * d.dqk;
              if (!gq.empty()) {
                for (std::int64_t c = 0; c < d.dqk; ++c) gq[qoff + c] += ds * kp[koff + c];
              }
              if (!gk.empty()) {
                for (std::int64_t c = 0; c < d.dqk; ++c) gk[koff + c] += ds * qp[qoff + c];
              }
            }
          }
        }
      }
      auto flush = [](const Tensor& t, const std::vector<double>& acc) {
        if (acc.empty()) return;
        auto buf = detail::grad_buffer(t);
        for (std::size_t i = 0; i < acc.size(); ++i) buf[i] += acc[i];
      };
      flush(q, gq);
      flush(k, gk);
      flush(v, gv);
    });
  }
  return y;
}

Tensor attention_probabilities(const Tensor& q, const Tensor& k, const std::optional<SlidingWindow>& sw,
                               double scale) {
  const CoreDims d = core_dims(q, k, nullptr);
  return Tensor::from_vector({d.batch, d.hq, d.len, d.len}, compute_probs(q, k, d, sw, scale));
}

Tensor attention_heads(const Tensor& x, const AttnConfig& cfg, const AttnWeights& w) {
  cfg.validate();
  std::int64_t batch = 0;
  std::int64_t len = 0;
  const Tensor xb = as_batched(x, batch, len);
  if (xb.dim(-1) != cfg.d_model) throw DimensionError("attention: input width differs from d_model");
  if (w.wq.shape() != Shape{cfg.d_model, cfg.n_head * cfg.d_qk} || w.wk.shape() != Shape{cfg.d_model, cfg.n_kv * cfg.d_qk} ||
      w.wv.shape() != Shape{cfg.d_model, cfg.n_kv * cfg.d_head}) {
    throw DimensionError("attention: projection shapes do not match AttnConfig");
  }
  const RopeConfig rope = cfg.rope();
  Tensor q = apply_rope(reshape(matmul(xb, w.wq), {batch, len, cfg.n_head, cfg.d_qk}), 0, rope);
  Tensor k = apply_rope(reshape(matmul(xb, w.wk), {batch, len, cfg.n_kv, cfg.d_qk}), 0, rope);
  Tensor v = reshape(matmul(xb, w.wv), {batch, len, cfg.n_kv, cfg.d_head});
  Tensor heads = attention_core(q, k, v, cfg.sliding, cfg.score_scale());
  if (x.rank() == 2) return reshape(heads, {len, cfg.n_head, cfg.d_head});
  return heads;
}

Tensor causal_attention_forward(const Tensor& x, const AttnConfig& cfg, const AttnWeights& w) {
  if (!w.wo.defined() || w.wo.shape() != Shape{cfg.n_head * cfg.d_head, cfg.d_model}) {
    throw DimensionError("attention: output projection shape does not match AttnConfig");
  }
  Tensor heads = attention_heads(x, cfg, w);
  Shape flat = x.shape();
  flat.back() = cfg.n_head * cfg.d_head;
  return matmul(reshape(heads, flat), w.wo);
}

Tensor swa_attention_forward(const Tensor& x, const AttnConfig& cfg, const AttnWeights& w) {
  if (!cfg.sliding) throw ContractError("swa_attention_forward: config has no sliding window");
  return causal_attention_forward(x, cfg, w);
}

FullKvCache::FullKvCache(std::int64_t n_kv, std::int64_t d_qk, std::int64_t d_v)
    : k_width_(n_kv * d_qk), v_width_(n_kv * d_v) {}

void FullKvCache::append(std::int64_t position, std::span<const double> key_rotated, std::span<const double> value) {
  if (position != length_) throw ContractError("FullKvCache: positions must be appended in order");
  if (static_cast<std::int64_t>(key_rotated.size()) != k_width_ || static_cast<std::int64_t>(value.size()) != v_width_) {
    throw DimensionError("FullKvCache: entry width mismatch");
  }
  keys_.insert(keys_.end(), key_rotated.begin(), key_rotated.end());
  values_.insert(values_.end(), value.begin(), value.end());
  ++length_;
}

RollingKvCache::RollingKvCache(std::int64_t n_kv, std::int64_t d_qk, std::int64_t d_v, SlidingWindow sw)
    : k_width_(n_kv * d_qk), v_width_(n_kv * d_v), sw_(sw) {
  if (sw.window < 1 || sw.sink < 0) throw ContractError("RollingKvCache: invalid window/sink");
}

std::int64_t RollingKvCache::length() const {
  return static_cast<std::int64_t>(sink_pos_.size() + ring_pos_.size());
}

void RollingKvCache::append(std::int64_t position, std::span<const double> key_raw, std::span<const double> value) {
  if (position != filled_) throw ContractError("RollingKvCache: positions must be appended in order");
  if (static_cast<std::int64_t>(key_raw.size()) != k_width_ || static_cast<std::int64_t>(value.size()) != v_width_) {
    throw DimensionError("RollingKvCache: entry width mismatch");
  }
  ++filled_;
  if (position < sw_.sink) {
    sink_pos_.push_back(position);
    sink_k_.insert(sink_k_.end(), key_raw.begin(), key_raw.end());
    sink_v_.insert(sink_v_.end(), value.begin(), value.end());
    return;
  }
  if (static_cast<std::int64_t>(ring_pos_.size()) < sw_.window) {
    ring_pos_.push_back(position);
    ring_k_.insert(ring_k_.end(), key_raw.begin(), key_raw.end());
    ring_v_.insert(ring_v_.end(), value.begin(), value.end());
    return;
  }
  // evict the oldest non-sink entry
  const std::int64_t slot = ring_head_;
  ring_pos_[slot] = position;
  std::copy(key_raw.begin(), key_raw.end(), ring_k_.begin() + slot * k_width_);
  std::copy(value.begin(), value.end(), ring_v_.begin() + slot * v_width_);
  ring_head_ = (ring_head_ + 1) % sw_.window;
}

namespace {

struct StepProjections {
  Tensor q;  // [1, n_head, d_qk], rotated
  Tensor k;  // [1, n_kv, d_qk], raw
  Tensor v;  // [1, n_kv, d_head]
};

StepProjections project_step(const Tensor& x_t, std::int64_t pos, const AttnConfig& cfg, const AttnWeights& w) {
  cfg.validate();
  if (x_t.shape() != Shape{1, cfg.d_model}) throw DimensionError("attention_step: expected x_t[1, d_model]");
  return {apply_rope(reshape(matmul(x_t, w.wq), {1, cfg.n_head, cfg.d_qk}), pos, cfg.rope()),
          reshape(matmul(x_t, w.wk), {1, cfg.n_kv, cfg.d_qk}), reshape(matmul(x_t, w.wv), {1, cfg.n_kv, cfg.d_head})};
}

// Attend from rotated q over entries supplied by `visit(fn)` with rotated keys.
template <typename Visit>
Tensor attend_entries(const Tensor& q, const AttnConfig& cfg, std::int64_t n_entries, Visit&& visit) {
  const std::int64_t group = cfg.group_size();
  const double scale = cfg.score_scale();
  std::vector<double> scores(static_cast<std::size_t>(cfg.n_head * n_entries));
  std::vector<const double*> values;
  values.reserve(static_cast<std::size_t>(n_entries));
  const double* qp = q.data().data();
  std::int64_t e = 0;
  visit([&](std::span<const double> key_rot, std::span<const double> value) {
    for (std::int64_t h = 0; h < cfg.n_head; ++h) {
      const double* kv = key_rot.data() + (h / group) * cfg.d_qk;
      double acc = 0.0;
      for (std::int64_t c = 0; c < cfg.d_qk; ++c) acc += qp[h * cfg.d_qk + c] * kv[c];
      scores[h * n_entries + e] = acc * scale;
    }
    values.push_back(value.data());
    ++e;
  });
  std::vector<double> out(static_cast<std::size_t>(cfg.n_head * cfg.d_head), 0.0);
  for (std::int64_t h = 0; h < cfg.n_head; ++h) {
    double* srow = scores.data() + h * n_entries;
    const double mx = *std::max_element(srow, srow + n_entries);
    double z = 0.0;
    for (std::int64_t i = 0; i < n_entries; ++i) {
      srow[i] = std::exp(srow[i] - mx);
      z += srow[i];
    }
    const std::int64_t g = h / group;
    for (std::int64_t i = 0; i < n_entries; ++i) {
      const double p = srow[i] / z;
      const double* vv = values[i] + g * cfg.d_head;
      for (std::int64_t c = 0; c < cfg.d_head; ++c) out[h * cfg.d_head + c] += p * vv[c];
    }
  }
  return detail::make_result({1, cfg.n_head, cfg.d_head}, std::move(out), "attention_step");
}

}  // namespace

Tensor attention_step_heads(const Tensor& x_t, std::int64_t pos, const AttnConfig& cfg, const AttnWeights& w,
                            FullKvCache& cache) {
  if (cfg.sliding) throw ContractError("attention_step: sliding-window config needs a RollingKvCache");
  StepProjections p = project_step(x_t, pos, cfg, w);
  Tensor k_rot = apply_rope(p.k, pos, cfg.rope());
  cache.append(pos, k_rot.data(), p.v.data());
  return attend_entries(p.q, cfg, cache.length(), [&](auto&& sink) {
    cache.for_each([&](std::int64_t, std::span<const double> k, std::span<const double> v) { sink(k, v); });
  });
}

Tensor attention_step_heads(const Tensor& x_t, std::int64_t pos, const AttnConfig& cfg, const AttnWeights& w,
                            RollingKvCache& cache) {
  if (!cfg.sliding || *cfg.sliding != cache.window()) {
    throw ContractError("attention_step: rolling cache window differs from config");
  }
  StepProjections p = project_step(x_t, pos, cfg, w);
  cache.append(pos, p.k.data(), p.v.data());
  // gather raw keys and rotate them at their absolute positions
  std::vector<std::int64_t> positions;
  std::vector<double> raw;
  std::vector<const double*> values;
  cache.for_each([&](std::int64_t position, std::span<const double> k, std::span<const double> v) {
    positions.push_back(position);
    raw.insert(raw.end(), k.begin(), k.end());
    values.push_back(v.data());
  });
  const auto n = static_cast<std::int64_t>(positions.size());
  Tensor rotated = apply_rope_at(Tensor::from_vector({n, cfg.n_kv, cfg.d_qk}, std::move(raw)), positions, cfg.rope());
  const std::int64_t kw = cfg.n_kv * cfg.d_qk;
  const std::int64_t vw = cfg.n_kv * cfg.d_head;
  return attend_entries(p.q, cfg, n, [&](auto&& sink) {
    auto rs = rotated.data();
    for (std::int64_t i = 0; i < n; ++i) {
      sink(rs.subspan(i * kw, kw), std::span<const double>(values[i], static_cast<std::size_t>(vw)));
    }
  });
}

}  // namespace hybridlab
