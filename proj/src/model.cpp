#include "hybridlab/model.hpp"

#include <cmath>

#include "hybridlab/ops.hpp"

namespace hybridlab {

HybridModel HybridModel::build(const ModelConfig& cfg, const LayoutSpec& layout, std::uint64_t seed) {
  cfg.validate();
  if (layout.blocks.empty()) throw ContractError("HybridModel: layout has no blocks");
  HybridModel m;
  m.cfg = cfg;
  m.layout = layout;
  const CounterRng root(seed);
  CounterRng er = root.fork("embedding");
  m.embedding = randn({cfg.vocab, cfg.d_model}, er, 1.0);
  for (std::size_t i = 0; i < layout.blocks.size(); ++i) {
    CounterRng lr = root.fork("layer").fork(static_cast<std::uint64_t>(i));
    m.layers.push_back(build_block(layout.blocks[i], cfg, lr));
  }
  m.final_norm = Tensor::full({cfg.d_model}, 1.0);
  CounterRng hr = root.fork("head");
  // small output head so an untrained model predicts near-uniform distributions
  m.head = randn({cfg.d_model, cfg.vocab}, hr, 0.1 / std::sqrt(static_cast<double>(cfg.d_model)));
  return m;
}

Tensor HybridModel::forward(std::span<const std::int64_t> tokens, std::vector<Routing>* routings) const {
  if (tokens.empty()) throw ContractError("HybridModel::forward: empty token sequence");
  for (std::int64_t t : tokens) {
    if (t < 0 || t >= cfg.vocab) throw DimensionError("HybridModel::forward: token id " + std::to_string(t) + " out of range");
  }
  Tensor x = embed(embedding, tokens);
  for (const auto& layer : layers) {
    Routing r;
    x = layer.forward(x, layer.moe ? &r : nullptr);
    if (routings && layer.moe) routings->push_back(std::move(r));
  }
  return matmul(rms_norm(x, final_norm), head);
}

NamedTensors HybridModel::named() {
  NamedTensors out{{"embedding", &embedding}};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto ln = layers[i].named("layers." + std::to_string(i) + ".");
    out.insert(out.end(), ln.begin(), ln.end());
  }
  out.emplace_back("final_norm", &final_norm);
  out.emplace_back("head", &head);
  return out;
}

std::vector<Tensor*> HybridModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void HybridModel::set_requires_grad(bool on) {
  for (Tensor* t : parameters()) t->set_requires_grad(on);
}

std::int64_t HybridModel::parameter_count() const {
  std::int64_t n = 0;
  for (Tensor* t : const_cast<HybridModel*>(this)->parameters()) n += t->numel();
  return n;
}

}  // namespace hybridlab
