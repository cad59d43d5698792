#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tomotx/diffcore/tensor.hpp"

namespace tomotx::diff {

// a: [..., n, k]; b: [..., k, m] with identical leading dims, or [k, m].
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise sum. b may also match a trailing suffix of a's shape, in which
// case it is broadcast over the leading dimensions.
Tensor add(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, float factor);

// Swaps the last two dimensions.
Tensor transpose(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

// Generic axis permutation; out.shape[i] = a.shape[perm[i]].
Tensor permute(const Tensor& a, const std::vector<int>& perm);

// Stacks rank-2 tensors with equal column counts along dim 0.
Tensor concat_rows(std::span<const Tensor> parts);

// out[i] = table[index[i]] for a rank-2 table; rows may repeat.
Tensor gather_rows(const Tensor& table, std::span<const int64_t> index);

// Normalizes over the last dimension; gain and bias have that length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);

Tensor softmax_lastdim(const Tensor& x);

// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

// x: [..., in]; weight: [in, out]; bias: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Mean squared error over all elements; returns a scalar.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace tomotx::diff
