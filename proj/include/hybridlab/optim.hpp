#pragma once

#include <cstdint>
#include <vector>

#include "hybridlab/tensor.hpp"

namespace hybridlab {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  /// Global gradient norm ceiling; non-positive disables clipping.
  double clip_norm = 1.0;
};

/// Decoupled weight decay Adam. Decay applies only to tensors of rank >= 2.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, AdamWConfig cfg);

  /// Applies one update with learning rate `lr` and returns the pre-clip
  /// global gradient norm.
  double step(double lr);
  void zero_grad();
  std::int64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor*> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// Linear warmup, constant plateau, linear cooldown to zero.
struct TrapezoidSchedule {
  double peak = 1e-3;
  std::int64_t total_steps = 1;
  std::int64_t warmup_steps = 0;
  std::int64_t cooldown_steps = 0;

  double at(std::int64_t step) const;
};

}  // namespace hybridlab
