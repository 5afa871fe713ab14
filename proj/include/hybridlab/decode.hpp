#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hybridlab/model.hpp"

namespace hybridlab {

/// Per-layer caches plus the next absolute position.
struct DecodeState {
  std::vector<LayerCache> caches;
  std::int64_t position = 0;
  std::int64_t max_position = std::int64_t{1} << 20;

  static DecodeState empty(const HybridModel& model, std::int64_t max_position = std::int64_t{1} << 20);
  /// Cache size at 2 bytes per element.
  std::int64_t state_bytes() const;
};

/// Feeds `token` at state.position and returns next-token logits [1, vocab].
Tensor decode_step(const HybridModel& model, DecodeState& state, std::int64_t token);

/// Steps through the prompt; returns logits after its last token.
std::pair<Tensor, DecodeState> prefill(const HybridModel& model, std::span<const std::int64_t> prompt,
                                       std::int64_t max_position = std::int64_t{1} << 20);

/// Greedy continuation of `prompt` by `n` tokens using cached decoding.
std::vector<std::int64_t> greedy_generate(const HybridModel& model, std::span<const std::int64_t> prompt,
                                          std::int64_t n);

std::int64_t argmax_row(const Tensor& logits, std::int64_t row);

struct DecodeTraceRow {
  std::int64_t step = 0;
  double ops = 0.0;
  std::int64_t state_bytes = 0;
};

/// Analytic trace: step s feeds position prompt_len + s; ops come from the
/// cost model and state bytes are the cache size after the step.
std::vector<DecodeTraceRow> decode_trace(const LayoutSpec& layout, const ModelConfig& cfg, std::int64_t prompt_len,
                                         std::int64_t gen_len);

/// Runs a real decode on random tokens; state bytes are measured from the caches.
std::vector<DecodeTraceRow> measure_decode(const HybridModel& model, std::int64_t prompt_len, std::int64_t gen_len,
                                           std::uint64_t seed);

void write_decode_csv(std::ostream& os, const std::vector<DecodeTraceRow>& rows, const std::string& config_json);

}  // namespace hybridlab
