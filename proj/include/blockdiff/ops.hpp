#pragma once

// Differentiable tensor ops. 2-D tensors are row-major [rows x cols].
// Every reduction folds left to right in index order.

#include <cstddef>
#include <span>
#include <vector>

#include "blockdiff/attention_mask.hpp"
#include "blockdiff/tensor.hpp"

namespace blockdiff::ops {

/// [m x k] x [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise sum of equally shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);

/// x[m x n] + bias[n] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

/// Elementwise product of equally shaped tensors.
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);

/// Sum of all elements -> scalar.
Tensor sum(const Tensor& a);

/// tanh approximation of GELU.
Tensor gelu(const Tensor& x);

/// Row-wise layer normalization with affine gamma/beta of length cols.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Gathers rows of `table` [V x D] -> [ids.size() x D].
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

/// Rows [begin, end) of a 2-D tensor.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

/// Stacks 2-D tensors with equal column counts.
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Per-row negative log-softmax at the target index -> [n].
/// Rows whose incoming gradient is exactly zero receive exactly zero gradient.
Tensor token_nll(const Tensor& logits, std::span<const std::size_t> targets);

/// sum_i weight_i * (-log softmax(logits_i)[target_i]) -> scalar.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                             std::span<const double> weights);

/// Multi-head scaled dot-product attention over q, k, v [L x D] where query q
/// only reads keys with mask.allowed(q, k). Head h uses columns
/// [h*D/heads, (h+1)*D/heads).
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const AttentionMask& mask, std::size_t num_heads);

/// Index of the largest entry of each row; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& x);

}  // namespace blockdiff::ops
