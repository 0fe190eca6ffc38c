#pragma once

// Internal forward kernels on raw spans. The tracked ops in ops.cpp and the
// cached decode paths both call these, so the two routes share one source of
// math truth. Reductions accumulate in double and round once on store.

#include <cmath>
#include <cstdint>
#include <span>

namespace jamba::kernels {

inline float sigmoidf(float x) {
    if (x >= 0.0f) {
        float e = std::exp(-x);
        return 1.0f / (1.0f + e);
    }
    float e = std::exp(x);
    return e / (1.0f + e);
}

inline float siluf(float x) { return x * sigmoidf(x); }

inline float softplusf(float x) {
    // max(x,0) + log1p(exp(-|x|))
    return std::max(x, 0.0f) + std::log1p(std::exp(-std::fabs(x)));
}

inline double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

// y[L,out] = x[L,in] * w[out,in]^T
inline void linear(std::span<const float> x, std::span<const float> w,
                   std::span<float> y, int64_t rows, int64_t in, int64_t out) {
    for (int64_t i = 0; i < rows; ++i) {
        std::span<const float> xr = x.subspan(static_cast<size_t>(i * in), static_cast<size_t>(in));
        for (int64_t o = 0; o < out; ++o) {
            std::span<const float> wr = w.subspan(static_cast<size_t>(o * in), static_cast<size_t>(in));
            y[static_cast<size_t>(i * out + o)] = static_cast<float>(dot(xr, wr));
        }
    }
}

// per-row RMS normalization with learned scale
inline void rms_norm_row(std::span<const float> x, std::span<const float> w,
                         float eps, std::span<float> y) {
    double ms = 0.0;
    for (float v : x) ms += static_cast<double>(v) * v;
    ms /= static_cast<double>(x.size());
    double r = 1.0 / std::sqrt(ms + static_cast<double>(eps));
    for (size_t i = 0; i < x.size(); ++i)
        y[i] = static_cast<float>(static_cast<double>(x[i]) * w[i] * r);
}

// stable softmax over one row
inline void softmax_row(std::span<const float> x, std::span<float> y) {
    float m = x[0];
    for (float v : x) m = std::max(m, v);
    double denom = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double e = std::exp(static_cast<double>(x[i]) - m);
        y[i] = static_cast<float>(e);
        denom += e;
    }
    double inv = 1.0 / denom;
    for (size_t i = 0; i < x.size(); ++i)
        y[i] = static_cast<float>(y[i] * inv);
}

// Depthwise causal convolution over channels-last [L, C] input with a
// [W, C] kernel. `state` holds the W-1 rows preceding x (oldest first) and
// is updated in place to the last W-1 rows of the extended sequence.
inline void causal_conv(std::span<const float> x, std::span<const float> kernel,
                        std::span<float> state, std::span<float> y,
                        int64_t rows, int64_t channels, int64_t width) {
    const int64_t pre = width - 1;
    for (int64_t t = 0; t < rows; ++t) {
        for (int64_t c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (int64_t w = 0; w < width; ++w) {
                int64_t src = t - pre + w;  // position in the extended sequence
                float v;
                if (src >= 0) {
                    v = x[static_cast<size_t>(src * channels + c)];
                } else {
                    int64_t s = src + pre;  // index into state rows
                    v = state[static_cast<size_t>(s * channels + c)];
                }
                acc += static_cast<double>(kernel[static_cast<size_t>(w * channels + c)]) * v;
            }
            y[static_cast<size_t>(t * channels + c)] = static_cast<float>(acc);
        }
    }
    // shift the window: last `pre` rows of (state ++ x)
    for (int64_t s = 0; s < pre; ++s) {
        int64_t src = rows - pre + s;
        for (int64_t c = 0; c < channels; ++c) {
            float v = src >= 0 ? x[static_cast<size_t>(src * channels + c)]
                               : state[static_cast<size_t>((src + pre) * channels + c)];
            state[static_cast<size_t>(s * channels + c)] = v;
        }
    }
}

// One step of the selective-scan recurrence for every (channel, state) pair:
//   h <- exp(delta*A) * h + delta * B * u,  y = <C, h> + D * u
// h is carried in float (the decode state); per-step math runs in double.
inline void scan_step(std::span<const float> u_t, std::span<const float> delta_t,
                      std::span<const float> b_t, std::span<const float> c_t,
                      std::span<const float> a, std::span<const float> d_skip,
                      std::span<float> h, std::span<float> y_t,
                      int64_t d_inner, int64_t d_state) {
    for (int64_t c = 0; c < d_inner; ++c) {
        double delta = delta_t[static_cast<size_t>(c)];
        double u = u_t[static_cast<size_t>(c)];
        double acc = 0.0;
        size_t base = static_cast<size_t>(c * d_state);
        for (int64_t n = 0; n < d_state; ++n) {
            double abar = std::exp(delta * a[base + static_cast<size_t>(n)]);
            double hv = abar * h[base + static_cast<size_t>(n)] +
                        delta * b_t[static_cast<size_t>(n)] * u;
            h[base + static_cast<size_t>(n)] = static_cast<float>(hv);
            acc += c_t[static_cast<size_t>(n)] * hv;
        }
        y_t[static_cast<size_t>(c)] = static_cast<float>(acc + static_cast<double>(d_skip[static_cast<size_t>(c)]) * u);
    }
}

} // namespace jamba::kernels
