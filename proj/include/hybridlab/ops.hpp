#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hybridlab/tensor.hpp"

namespace hybridlab {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

/// `w` is aligned with the trailing axes of `x`; each of its extents either
/// matches or is 1. A shape-{1} `w` acts as a learnable scalar.
Tensor broadcast_mul(const Tensor& x, const Tensor& w);
Tensor broadcast_add(const Tensor& x, const Tensor& w);

/// a[..., k] x b[k, n] -> [..., n]. Leading axes of `a` are flattened.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exponential(const Tensor& x);

/// Reductions to a shape-{1} tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax_lastdim(const Tensor& x);

/// x / sqrt(mean(x^2) + eps) over the last axis.
Tensor rms_normalize(const Tensor& x, double eps);
/// (x - mean) / sqrt(var + eps) over the last axis.
Tensor standardize(const Tensor& x, double eps);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_last(const Tensor& x, std::int64_t start, std::int64_t length);
Tensor concat_last(std::span<const Tensor> parts);

/// table[idx[i], :] stacked; gradients scatter-add back into `table`.
Tensor take_rows(const Tensor& table, std::span<const std::int64_t> idx);
/// Inverse of take_rows: result[idx[i], :] += rows[i, :], result has n_rows rows.
Tensor scatter_rows(const Tensor& rows, std::span<const std::int64_t> idx, std::int64_t n_rows);
/// x[i, cols[i]] for a 2-D `x`.
Tensor pick_cols(const Tensor& x, std::span<const std::int64_t> cols);

/// Mean token cross-entropy over rows of `logits`; targets < 0 are ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

}  // namespace hybridlab
