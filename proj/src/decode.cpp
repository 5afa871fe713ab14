#include "hybridlab/decode.hpp"

#include <ostream>

#include "hybridlab/cost.hpp"
#include "hybridlab/csv.hpp"
#include "hybridlab/ops.hpp"
#include "hybridlab/rng.hpp"

namespace hybridlab {

DecodeState DecodeState::empty(const HybridModel& model, std::int64_t max_position) {
  DecodeState s;
  s.max_position = max_position;
  s.caches.reserve(model.layers.size());
  for (const auto& layer : model.layers) s.caches.push_back(layer.make_cache());
  return s;
}

std::int64_t DecodeState::state_bytes() const {
  std::int64_t n = 0;
  for (const auto& c : caches) n += cache_element_count(c);
  return n * kCacheBytesPerElement;
}

Tensor decode_step(const HybridModel& model, DecodeState& state, std::int64_t token) {
  if (state.caches.size() != model.layers.size()) {
    throw ContractError("decode_step: state does not belong to this model");
  }
  if (state.position >= state.max_position) {
    throw ContractError("decode_step: position " + std::to_string(state.position) + " exceeds maximum " +
                        std::to_string(state.max_position));
  }
  if (token < 0 || token >= model.cfg.vocab) {
    throw DimensionError("decode_step: token id " + std::to_string(token) + " out of range");
  }
  const std::int64_t tok[1] = {token};
  Tensor x = embed(model.embedding, tok);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    x = model.layers[i].step(x, state.position, state.caches[i]);
  }
  ++state.position;
  return matmul(rms_norm(x, model.final_norm), model.head);
}

std::pair<Tensor, DecodeState> prefill(const HybridModel& model, std::span<const std::int64_t> prompt,
                                       std::int64_t max_position) {
  if (prompt.empty()) throw ContractError("prefill: empty prompt");
  DecodeState state = DecodeState::empty(model, max_position);
  Tensor logits;
  for (std::int64_t t : prompt) logits = decode_step(model, state, t);
  return {logits, std::move(state)};
}

std::int64_t argmax_row(const Tensor& logits, std::int64_t row) {
  const std::int64_t v = logits.shape().back();
  auto d = logits.data().subspan(static_cast<std::size_t>(row * v), static_cast<std::size_t>(v));
  std::int64_t best = 0;
  for (std::int64_t j = 1; j < v; ++j) {
    if (d[j] > d[best]) best = j;
  }
  return best;
}

std::vector<std::int64_t> greedy_generate(const HybridModel& model, std::span<const std::int64_t> prompt,
                                          std::int64_t n) {
  auto [logits, state] = prefill(model, prompt);
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t next = argmax_row(logits, 0);
    out.push_back(next);
    if (i + 1 < n) logits = decode_step(model, state, next);
  }
  return out;
}

std::vector<DecodeTraceRow> decode_trace(const LayoutSpec& layout, const ModelConfig& cfg, std::int64_t prompt_len,
                                         std::int64_t gen_len) {
  if (prompt_len < 1) throw ContractError("decode_trace: empty prompt");
  if (gen_len < 0) throw ContractError("decode_trace: negative generation length");
  std::vector<DecodeTraceRow> rows;
  for (std::int64_t s = 0; s < gen_len; ++s) {
    const std::int64_t visible = prompt_len + s + 1;
    DecodeTraceRow r;
    r.step = s;
    for (const auto& b : layout.blocks) {
      r.ops += block_decode_ops(b, cfg, visible);
      r.state_bytes += block_cache_bytes(b, cfg, visible);
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<DecodeTraceRow> measure_decode(const HybridModel& model, std::int64_t prompt_len, std::int64_t gen_len,
                                           std::uint64_t seed) {
  if (prompt_len < 1) throw ContractError("measure_decode: empty prompt");
  CounterRng rng(seed);
  std::vector<std::int64_t> prompt(static_cast<std::size_t>(prompt_len));
  for (auto& t : prompt) t = rng.below(model.cfg.vocab);
  auto [logits, state] = prefill(model, prompt);
  std::vector<DecodeTraceRow> rows;
  for (std::int64_t s = 0; s < gen_len; ++s) {
    logits = decode_step(model, state, argmax_row(logits, 0));
    DecodeTraceRow r;
    r.step = s;
    for (const auto& b : model.layout.blocks) r.ops += block_decode_ops(b, model.cfg, state.position);
    r.state_bytes = state.state_bytes();
    rows.push_back(r);
  }
  return rows;
}

void write_decode_csv(std::ostream& os, const std::vector<DecodeTraceRow>& rows, const std::string& config_json) {
  write_csv_preamble(os, config_json);
  write_csv_row(os, {"step", "ops", "state_bytes"});
  for (const auto& r : rows) write_csv_row(os, {std::to_string(r.step), fmt_full(r.ops), std::to_string(r.state_bytes)});
}

}  // namespace hybridlab
