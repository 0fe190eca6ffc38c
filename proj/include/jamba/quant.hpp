#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jamba/ops.hpp"
#include "jamba/tensor.hpp"

namespace jamba {

struct JambaConfig;
struct Model;

// Weight-only INT8 storage: symmetric per-output-channel scales, values in
// [-127, 127] (-128 unused). Calibration-free by construction.
struct QuantizedLinear {
    std::vector<int8_t> q;      // [out*in] row-major
    std::vector<float> scales;  // [out]
    int64_t out_features = 0;
    int64_t in_features = 0;

    size_t bytes() const { return q.size() + scales.size() * sizeof(float); }
};

// scales[r] = max|W_r|/127 (1.0 for an all-zero row); q = round-half-to-even.
QuantizedLinear quantize_int8(const Tensor& w);

// full-precision reconstruction, row-major [out*in]
std::vector<float> dequantize(const QuantizedLinear& qw);

// x:[m,in] -> [m,out]. The weight is processed in tiles; each INT8 tile is
// converted to float inside the tile loop and the full dequantized matrix is
// never materialized. Scratch use is visible through quant_scratch_peak_bytes.
Tensor fused_dequant_matmul(const Tensor& x, const QuantizedLinear& qw);

size_t quant_scratch_peak_bytes();
void reset_quant_scratch_peak();

// A linear layer that may carry INT8 weights. Full-precision layers go
// through the differentiable linear op; quantized layers through the fused
// dequantizing matmul (inference only).
struct Linear {
    Tensor w;  // [out,in]; dropped once quantized
    std::optional<QuantizedLinear> q;

    Tensor forward(const Tensor& x) const;
    int64_t out_features() const { return q ? q->out_features : w.dim(0); }
    int64_t in_features() const { return q ? q->in_features : w.dim(1); }
    int64_t param_count() const { return out_features() * in_features(); }
    bool quantized() const { return q.has_value(); }
};

// Which weight families get quantized. Attention, Mamba, router, embedding
// and norm weights are never quantized.
struct QuantPolicy {
    bool moe_experts = true;
    bool mlp = true;
};

struct QuantReport {
    int64_t total_params = 0;
    int64_t moe_expert_params = 0;
    int64_t mlp_params = 0;
    int64_t router_params = 0;
    int64_t attention_params = 0;
    int64_t mamba_params = 0;
    int64_t embedding_params = 0;
    int64_t norm_params = 0;
    int64_t quantized_params = 0;
    double seconds = 0.0;

    double moe_fraction() const;
    double moe_mlp_fraction() const;
    double quantized_fraction() const;
};

// Counting-only report from the config arithmetic; no tensors are built, so
// this works for the full-scale presets.
QuantReport quant_report(const JambaConfig& config, const QuantPolicy& policy);

// Replaces every FFN linear covered by the policy with INT8 weights, in
// place. No calibration data is consumed.
QuantReport quantize_model(Model& model, const QuantPolicy& policy);

} // namespace jamba
