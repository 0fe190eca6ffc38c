#pragma once

#include <cstdint>
#include <vector>

#include "jamba/ops.hpp"
#include "jamba/tensor.hpp"

namespace jamba {

// Causal grouped-query attention. Each KV head serves n_q_heads/n_kv_heads
// query heads; scores are scaled by 1/sqrt(head_dim). No positional encoding:
// the surrounding architecture carries position through its Mamba layers.
struct AttentionParams {
    int64_t d_model = 0;
    int64_t n_q_heads = 0;
    int64_t n_kv_heads = 0;
    int64_t head_dim = 0;  // d_model / n_q_heads
    Tensor q_proj;  // [n_q_heads*head_dim, d_model]
    Tensor k_proj;  // [n_kv_heads*head_dim, d_model]
    Tensor v_proj;  // [n_kv_heads*head_dim, d_model]
    Tensor o_proj;  // [d_model, n_q_heads*head_dim]

    static AttentionParams init(int64_t d_model, int64_t n_q_heads, int64_t n_kv_heads,
                                Rng& rng, bool trainable);
    void validate() const;
    int64_t group() const { return n_q_heads / n_kv_heads; }
};

// Per-sequence key/value store, one buffer per KV head, grown by the usual
// amortized doubling. bytes() reports the live 2*H*T*D*sizeof(float).
class KVCache {
public:
    KVCache() = default;
    KVCache(int64_t n_kv_heads, int64_t head_dim);

    int64_t n_kv_heads() const { return n_kv_heads_; }
    int64_t head_dim() const { return head_dim_; }
    int64_t tokens() const { return tokens_; }

    // k_row/v_row are [n_kv_heads*head_dim] projections of one token
    void append(std::span<const float> k_row, std::span<const float> v_row);

    std::span<const float> keys(int64_t head) const;    // [T*head_dim]
    std::span<const float> values(int64_t head) const;  // [T*head_dim]

    size_t bytes() const;

private:
    int64_t n_kv_heads_ = 0;
    int64_t head_dim_ = 0;
    int64_t tokens_ = 0;
    std::vector<std::vector<float>> keys_;
    std::vector<std::vector<float>> values_;
};

// [n_kv_heads, T, head_dim] -> [n_kv_heads*group, T, head_dim], each head
// duplicated `group` times in order.
Tensor repeat_kv(const Tensor& kv, int64_t group);

// Causal attention core over full projections; q:[L,Hq*D], k/v:[L,Hkv*D].
// Differentiable.
Tensor gqa_causal_attend(const Tensor& q, const Tensor& k, const Tensor& v,
                         int64_t n_q_heads, int64_t n_kv_heads);

// Full layer: projections + attention + output projection. Without a cache
// this is the differentiable training path. With a cache, x is treated as the
// continuation of the cached sequence; the call appends to the cache and runs
// untracked.
Tensor attention_forward(const Tensor& x, const AttentionParams& params,
                         KVCache* cache = nullptr);

} // namespace jamba
