#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hybridlab/nn.hpp"
#include "hybridlab/rng.hpp"
#include "hybridlab/tensor.hpp"

namespace hybridlab {

/// Recent-token window plus always-visible prefix ("sink") tokens.
struct SlidingWindow {
  std::int64_t window = 0;
  std::int64_t sink = 0;

  friend bool operator==(const SlidingWindow&, const SlidingWindow&) = default;
};

struct AttnConfig {
  std::int64_t d_model = 0;
  std::int64_t n_head = 0;
  std::int64_t n_kv = 0;
  std::int64_t d_head = 0;  // value width per head
  std::int64_t d_qk = 0;    // query/key width per head, <= d_head
  std::optional<SlidingWindow> sliding;
  double rope_base = kDefaultRopeBase;

  void validate() const;
  RopeConfig rope() const { return RopeConfig{d_qk, rope_base}; }
  double score_scale() const;
  std::int64_t group_size() const { return n_head / n_kv; }
};

struct AttnWeights {
  Tensor wq;  // [d_model, n_head * d_qk]
  Tensor wk;  // [d_model, n_kv * d_qk]
  Tensor wv;  // [d_model, n_kv * d_head]
  Tensor wo;  // [n_head * d_head, d_model]; undefined for fused-branch use

  static AttnWeights init(const AttnConfig& cfg, CounterRng& rng, bool with_output = true);
};

/// True when position p is visible from query position t.
constexpr bool is_visible(std::int64_t t, std::int64_t p, const std::optional<SlidingWindow>& sw) {
  if (p > t || p < 0) return false;
  if (!sw) return true;
  return p < sw->sink || p > t - sw->window;
}

/// Sorted visible positions for query t in a sequence of length L.
std::vector<std::int64_t> swa_mask(std::int64_t t, std::int64_t length, std::int64_t window, std::int64_t sink);

/// Masked scaled-dot-product attention over q[B,L,Hq,dqk], k[B,L,Hkv,dqk],
/// v[B,L,Hkv,dv] with query head h reading kv head h / (Hq/Hkv).
/// Returns [B,L,Hq,dv].
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, const std::optional<SlidingWindow>& sw,
                      double scale);

/// Post-softmax attention weights [B,Hq,L,L] (inference only).
Tensor attention_probabilities(const Tensor& q, const Tensor& k, const std::optional<SlidingWindow>& sw,
                               double scale);

/// Per-head outputs before the output projection. x is [L,d] or [B,L,d];
/// result is [L,Hq,d_head] or [B,L,Hq,d_head].
Tensor attention_heads(const Tensor& x, const AttnConfig& cfg, const AttnWeights& w);

Tensor causal_attention_forward(const Tensor& x, const AttnConfig& cfg, const AttnWeights& w);
Tensor swa_attention_forward(const Tensor& x, const AttnConfig& cfg, const AttnWeights& w);

/// Growing cache of rotated keys and values, one entry per position.
class FullKvCache {
 public:
  FullKvCache(std::int64_t n_kv, std::int64_t d_qk, std::int64_t d_v);

  void append(std::int64_t position, std::span<const double> key_rotated, std::span<const double> value);
  std::int64_t length() const { return length_; }
  std::int64_t element_count() const { return static_cast<std::int64_t>(keys_.size() + values_.size()); }

  template <typename Fn>  // fn(position, rotated key span, value span)
  void for_each(Fn&& fn) const {
    for (std::int64_t i = 0; i < length_; ++i) {
      fn(i, std::span<const double>(keys_).subspan(i * k_width_, k_width_),
         std::span<const double>(values_).subspan(i * v_width_, v_width_));
    }
  }

 private:
  std::int64_t k_width_;
  std::int64_t v_width_;
  std::int64_t length_ = 0;
  std::vector<double> keys_;
  std::vector<double> values_;
};

/// Sink prefix plus a ring of the most recent `window` positions. Keys are
/// stored before rotation and rotated at their absolute position on read.
class RollingKvCache {
 public:
  RollingKvCache(std::int64_t n_kv, std::int64_t d_qk, std::int64_t d_v, SlidingWindow sw);

  void append(std::int64_t position, std::span<const double> key_raw, std::span<const double> value);
  /// Entries currently held (<= sink + window).
  std::int64_t length() const;
  std::int64_t filled() const { return filled_; }
  std::int64_t element_count() const { return length() * (k_width_ + v_width_); }
  const SlidingWindow& window() const { return sw_; }

  template <typename Fn>  // fn(position, raw key span, value span), ascending positions
  void for_each(Fn&& fn) const {
    for (std::size_t i = 0; i < sink_pos_.size(); ++i) {
      fn(sink_pos_[i], std::span<const double>(sink_k_).subspan(i * k_width_, k_width_),
         std::span<const double>(sink_v_).subspan(i * v_width_, v_width_));
    }
    const auto n = static_cast<std::int64_t>(ring_pos_.size());
    for (std::int64_t j = 0; j < n; ++j) {
      const std::int64_t slot = (ring_head_ + j) % n;
      fn(ring_pos_[slot], std::span<const double>(ring_k_).subspan(slot * k_width_, k_width_),
         std::span<const double>(ring_v_).subspan(slot * v_width_, v_width_));
    }
  }

 private:
  std::int64_t k_width_;
  std::int64_t v_width_;
  SlidingWindow sw_;
  std::int64_t filled_ = 0;
  std::vector<std::int64_t> sink_pos_;
  std::vector<double> sink_k_;
  std::vector<double> sink_v_;
  std::vector<std::int64_t> ring_pos_;
  std::vector<double> ring_k_;
  std::vector<double> ring_v_;
  std::int64_t ring_head_ = 0;  // oldest slot once the ring is full
};

/// One cached decoding step for input row x_t[1, d_model] at absolute
/// position `pos`; returns per-head outputs [1, n_head, d_head].
Tensor attention_step_heads(const Tensor& x_t, std::int64_t pos, const AttnConfig& cfg, const AttnWeights& w,
                            FullKvCache& cache);
Tensor attention_step_heads(const Tensor& x_t, std::int64_t pos, const AttnConfig& cfg, const AttnWeights& w,
                            RollingKvCache& cache);

}  // namespace hybridlab
