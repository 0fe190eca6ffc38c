#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "jamba/ops.hpp"
#include "jamba/tensor.hpp"

namespace jamba {

// Mamba-1 selective SSM layer. The state transition is A_bar = exp(delta*A)
// with A = -exp(a_log) strictly negative, and the simplified Euler input term
// delta*B (no full ZOH for B).
struct MambaParams {
    int64_t d_model = 0;
    int64_t d_inner = 0;  // expand * d_model
    int64_t d_state = 0;  // N
    int64_t d_conv = 0;   // W
    int64_t dt_rank = 0;

    Tensor in_proj;      // [2*d_inner, d_model] -> (candidate u, gate z)
    Tensor conv_kernel;  // [d_conv, d_inner], depthwise
    Tensor x_proj;       // [dt_rank + 2*d_state, d_inner] -> (dt, B, C)
    Tensor dt_proj;      // [d_inner, dt_rank]
    Tensor a_log;        // [d_inner, d_state]
    Tensor d_skip;       // [d_inner]
    Tensor out_proj;     // [d_model, d_inner]

    static MambaParams init(int64_t d_model, int64_t d_state, int64_t d_conv, int64_t expand,
                            int64_t dt_rank, Rng& rng, bool trainable);
    void validate() const;
    size_t state_bytes() const;
};

// Constant-size decode state: size depends only on the params, never on how
// many tokens have been processed.
struct MambaState {
    std::vector<float> ssm;   // [d_inner * d_state] hidden state h
    std::vector<float> conv;  // [(d_conv-1) * d_inner] trailing inner activations

    static MambaState zeros(const MambaParams& p);
    size_t bytes() const { return (ssm.size() + conv.size()) * sizeof(float); }
};

struct ScanResult {
    Tensor y;                  // [L, d_inner]
    std::vector<float> state;  // final h, [d_inner * d_state]
};

// Selective scan recurrence, sequential over L. u/delta:[L,d_inner],
// B/C:[L,d_state], A:[d_inner,d_state] (strictly negative), D:[d_inner].
// Differentiable when no initial state is given; continuation from a state
// is inference-only and never taped.
ScanResult selective_scan(const Tensor& u, const Tensor& delta, const Tensor& B,
                          const Tensor& C, const Tensor& A, const Tensor& D,
                          const std::vector<float>* state_in = nullptr);

struct MambaResult {
    Tensor y;  // [L, d_model]
    MambaState state;
};

// Full layer over a sequence. With `state_in` the call continues a previous
// sequence (untracked).
MambaResult mamba_forward(const Tensor& x, const MambaParams& params,
                          const MambaState* state_in = nullptr);

// Single-token decode; updates `state` in place and returns y_t. Matches
// mamba_forward over the same token stream.
std::vector<float> mamba_step(std::span<const float> x_t, const MambaParams& params,
                              MambaState& state);

} // namespace jamba
