#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "slic/tensor.hpp"

// Differentiable ops. Matrix ops treat a tensor as rows x cols (see
// Tensor::rows/cols). Shapes must match exactly unless an op documents a
// broadcast; a mismatch throws std::invalid_argument naming the op and shapes.
namespace slic::ops {

// a[m x k] * b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a[m x n] + bias[n], bias broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor relu(const Tensor& a);
// tanh approximation
Tensor gelu(const Tensor& a);

// Row-wise over the last axis. log_softmax subtracts the row max first.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

// Row-wise normalization of x[m x n] with affine gamma[n], beta[n].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Rows of table[V x D] selected by ids -> [ids.size() x D].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);
// Picks a[i, ids[i]] from a[n x V] -> [n].
Tensor gather(const Tensor& a, std::span<const std::int32_t> ids);
// Rows [begin, begin + count) of a matrix.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
// Flat elements a[indices[i]] -> [indices.size()].
Tensor take(const Tensor& a, std::span<const std::size_t> indices);
// Flattened concatenation -> [sum numel].
Tensor concat(std::span<const Tensor> parts);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sums of consecutive runs of a flat tensor; lengths must cover it exactly.
Tensor segment_sum(const Tensor& a, std::span<const std::size_t> lengths);

// Replaces entries with mask != 0 by value; no gradient flows through them.
Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask, double value);

// One attention problem inside packed q/k/v row blocks.
struct AttentionSegment {
    std::size_t q_begin = 0;
    std::size_t q_len = 0;
    std::size_t k_begin = 0;
    std::size_t k_len = 0;
};

// Scaled dot-product attention with `heads` heads over packed rows. Each
// segment's queries see only that segment's keys; with `causal`, query i sees
// keys 0..i. Query rows outside every segment come out zero.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            std::span<const AttentionSegment> segments, bool causal);

}  // namespace slic::ops
