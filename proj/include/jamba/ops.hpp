#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "jamba/tensor.hpp"

namespace jamba {

// Elementwise / shape ops. All ops are pure and differentiable; inputs are
// never mutated. Shapes must match exactly (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// y = x * w^T for row-major weights w:[out,in]; x:[rows,in] -> [rows,out]
Tensor linear(const Tensor& x, const Tensor& w);

// softmax along `axis` (negative axes count from the end), max-subtracted
Tensor softmax(const Tensor& x, int axis);

// RMS normalization over the last axis, scaled by `weight` (eps > 0)
Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps);

// rows of `table` selected by token id; [L] -> [L, d]
Tensor embedding(const Tensor& table, std::span<const int32_t> tokens);

// contiguous column range [begin, end) of a rank-2 tensor
Tensor slice_cols(const Tensor& x, int64_t begin, int64_t end);

Tensor sum(const Tensor& x);          // scalar
Tensor sum_squares(const Tensor& x);  // scalar

// mean over rows of -log softmax(logits)[target]; logits:[L,V]
Tensor cross_entropy_mean(const Tensor& logits, std::span<const int32_t> targets);

// softmax over k logits gathered per row at `indices`; logits:[L,E] -> [L,k]
Tensor topk_softmax(const Tensor& logits, std::span<const int32_t> indices, int64_t k);

// y[t] = sum_j w[t,j] * rows[t*k+j]; rows:[L*k,d], w:[L,k] -> [L,d]
Tensor weighted_combine(const Tensor& rows, const Tensor& w);

struct ConvResult {
    Tensor y;
    std::vector<float> state;  // last (W-1) input rows, oldest first
};

// Depthwise causal convolution. x:[L,C], kernel:[W,C]. When `state_in` is
// given the sequence continues from it (inference only, never taped);
// otherwise the left edge is zero-padded and the op is differentiable.
ConvResult causal_conv1d(const Tensor& x, const Tensor& kernel,
                         const std::vector<float>* state_in = nullptr);

} // namespace jamba
