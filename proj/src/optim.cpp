#include "hybridlab/optim.hpp"

#include <algorithm>
#include <cmath>

namespace hybridlab {

AdamW::AdamW(std::vector<Tensor*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1) {
    throw ContractError("AdamW: betas must lie in [0, 1)");
  }
  for (Tensor* p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p->numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p->numel()), 0.0);
  }
}

void AdamW::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

double AdamW::step(double lr) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  double sq = 0.0;
  for (Tensor* p : params_) {
    grads.push_back(p->grad());
    for (double g : grads.back()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("AdamW: non-finite gradient norm");
  const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor* p = params_[i];
    auto w = p->mutable_data();
    const bool decay = p->rank() >= 2 && cfg_.weight_decay > 0;
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * gj * gj;
      if (decay) w[j] -= lr * cfg_.weight_decay * w[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
  return norm;
}

double TrapezoidSchedule::at(std::int64_t step) const {
  if (step < 0) return 0.0;
  if (warmup_steps > 0 && step < warmup_steps) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const std::int64_t cool_start = total_steps - cooldown_steps;
  if (cooldown_steps > 0 && step >= cool_start) {
    const double frac = static_cast<double>(total_steps - step) / static_cast<double>(cooldown_steps);
    return peak * std::max(0.0, frac);
  }
  return peak;
}

}  // namespace hybridlab
