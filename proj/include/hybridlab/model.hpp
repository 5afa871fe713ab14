#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hybridlab/config.hpp"
#include "hybridlab/hybrid.hpp"

namespace hybridlab {

/// Embedding, a stack of layers, final norm and an untied output head.
struct HybridModel {
  ModelConfig cfg;
  LayoutSpec layout;
  Tensor embedding;   // [vocab, d_model]
  std::vector<Layer> layers;
  Tensor final_norm;  // [d_model]
  Tensor head;        // [d_model, vocab]

  static HybridModel build(const ModelConfig& cfg, const LayoutSpec& layout, std::uint64_t seed);

  /// Logits [L, vocab]. Per-layer MoE routing is appended when requested.
  Tensor forward(std::span<const std::int64_t> tokens, std::vector<Routing>* routings = nullptr) const;

  NamedTensors named();
  std::vector<Tensor*> parameters();
  void set_requires_grad(bool on);
  std::int64_t parameter_count() const;
};

}  // namespace hybridlab
