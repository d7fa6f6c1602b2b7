#pragma once

#include <span>
#include <vector>

#include "tpp/tensor.hpp"

// Free-function op library over Tensor. Every differentiable op records a
// backward rule; gradients accumulate by summation into requires_grad
// leaves. All kernels are plain loops with a pinned accumulation order:
// per-row computations are bit-identical regardless of where the row sits
// in the batch, which the permutation-equivariance contract relies on.
namespace tpp {

Shape broadcast_shape(const Shape& a, const Shape& b);

// Elementwise with numpy-style trailing broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double value);
Tensor mul_scalar(const Tensor& a, double value);

Tensor gelu(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Temperature softmax over the trailing dimension, stabilized by
/// subtracting the row max before exponentiation. tau holds one strictly
/// positive temperature per row (or a single shared scalar).
Tensor softmax_temp(const Tensor& logits, const Tensor& tau);

/// Per-row standardization with epsilon 1e-5 inside the square root,
/// followed by the affine scale/shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, w), b);
}

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end);
Tensor slice_cols(const Tensor& a, std::int64_t begin, std::int64_t end);

/// Column sums of the slice-weight matrix: norms[j] = sum_i w[i, j], shape
/// [M x 1]. When point_ids is non-empty the sum runs in ascending-id order,
/// making the result invariant under consistent (rows, ids) permutation.
Tensor slice_weight_norms(const Tensor& w, std::span<const std::int64_t> point_ids = {});

/// Weighted aggregation numer[j, c] = sum_i w[i, j] * v[i, c], shape
/// [M x C]. Same id-ordered accumulation contract as slice_weight_norms.
Tensor slice_states_numer(const Tensor& v, const Tensor& w,
                          std::span<const std::int64_t> point_ids = {});

}  // namespace tpp
