#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hybridlab/tensor.hpp"

namespace hybridlab {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::int64_t checked = 0;
  std::string worst;  // "tensor[index]" of the worst entry
};

/// Central-difference check of d(loss)/d(param) for every listed tensor.
/// Relative error is |a - f| / max(|a|, |f|, floor). At most
/// `max_per_tensor` entries per tensor are probed (evenly strided); a
/// non-positive value probes all of them.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, const std::vector<std::pair<std::string, Tensor*>>& params,
                           double step = 1e-5, std::int64_t max_per_tensor = 0, double floor = 1e-3);

struct PropertyResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  std::vector<std::string> suites;  // empty runs every suite
  bool chaos_flip_sign = false;     // negates the reference side of numeric checks
  std::uint64_t seed = 0;
};

std::vector<std::string> verify_suite_names();

std::vector<PropertyResult> run_verify(const VerifyOptions& opts);

}  // namespace hybridlab
