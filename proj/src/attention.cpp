#include "jamba/attention.hpp"

#include <cmath>

#include "kernels.hpp"

namespace jamba {

AttentionParams AttentionParams::init(int64_t d_model, int64_t n_q_heads, int64_t n_kv_heads,
                                      Rng& rng, bool trainable) {
    AttentionParams p;
    p.d_model = d_model;
    p.n_q_heads = n_q_heads;
    p.n_kv_heads = n_kv_heads;
    p.head_dim = d_model / n_q_heads;
    p.validate();
    const float std_w = 0.02f;
    p.q_proj = Tensor::randn({n_q_heads * p.head_dim, d_model}, rng, std_w, trainable);
    p.k_proj = Tensor::randn({n_kv_heads * p.head_dim, d_model}, rng, std_w, trainable);
    p.v_proj = Tensor::randn({n_kv_heads * p.head_dim, d_model}, rng, std_w, trainable);
    p.o_proj = Tensor::randn({d_model, n_q_heads * p.head_dim}, rng, std_w, trainable);
    return p;
}

void AttentionParams::validate() const {
    if (n_q_heads <= 0 || n_kv_heads <= 0 || d_model <= 0)
        throw config_error("attention: head counts and d_model must be positive");
    if (d_model % n_q_heads != 0)
        throw config_error("attention: d_model " + std::to_string(d_model) +
                           " not divisible by n_q_heads " + std::to_string(n_q_heads));
    if (n_q_heads % n_kv_heads != 0)
        throw config_error("attention: n_q_heads " + std::to_string(n_q_heads) +
                           " not divisible by n_kv_heads " + std::to_string(n_kv_heads));
}

KVCache::KVCache(int64_t n_kv_heads, int64_t head_dim)
    : n_kv_heads_(n_kv_heads), head_dim_(head_dim),
      keys_(static_cast<size_t>(n_kv_heads)), values_(static_cast<size_t>(n_kv_heads)) {}

void KVCache::append(std::span<const float> k_row, std::span<const float> v_row) {
    const size_t want = static_cast<size_t>(n_kv_heads_ * head_dim_);
    if (k_row.size() != want || v_row.size() != want)
        throw cache_error("kv append: row size mismatch");
    for (int64_t h = 0; h < n_kv_heads_; ++h) {
        auto ks = k_row.subspan(static_cast<size_t>(h * head_dim_), static_cast<size_t>(head_dim_));
        auto vs = v_row.subspan(static_cast<size_t>(h * head_dim_), static_cast<size_t>(head_dim_));
        keys_[static_cast<size_t>(h)].insert(keys_[static_cast<size_t>(h)].end(), ks.begin(), ks.end());
        values_[static_cast<size_t>(h)].insert(values_[static_cast<size_t>(h)].end(), vs.begin(), vs.end());
    }
    ++tokens_;
}

std::span<const float> KVCache::keys(int64_t head) const { return keys_[static_cast<size_t>(head)]; }
std::span<const float> KVCache::values(int64_t head) const { return values_[static_cast<size_t>(head)]; }

size_t KVCache::bytes() const {
    return static_cast<size_t>(2 * n_kv_heads_ * tokens_ * head_dim_) * sizeof(float);
}

Tensor repeat_kv(const Tensor& kv, int64_t group) {
    if (group < 1) throw config_error("repeat_kv: group must be >= 1");
    if (kv.rank() != 3)
        throw dim_error("repeat_kv: expected [n_kv_heads, T, head_dim], got " + shape_str(kv.shape()));
    const int64_t heads = kv.dim(0), t = kv.dim(1), d = kv.dim(2);
    std::vector<float> out(static_cast<size_t>(heads * group * t * d));
    auto src = kv.data();
    const int64_t block = t * d;
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t g = 0; g < group; ++g)
            std::copy_n(src.data() + h * block, block, out.data() + (h * group + g) * block);
    return Tensor::make_op("repeat_kv", {heads * group, t, d}, std::move(out), {kv},
                           [kv, heads, group, block](detail::Node& self) {
        std::vector<float> g(static_cast<size_t>(heads * block), 0.0f);
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t r = 0; r < group; ++r) {
                const float* srcg = self.grad.data() + (h * group + r) * block;
                float* dst = g.data() + h * block;
                for (int64_t i = 0; i < block; ++i) dst[i] += srcg[i];
            }
        kv.node()->accumulate(g);
    });
}

Tensor gqa_causal_attend(const Tensor& q, const Tensor& k, const Tensor& v,
                         int64_t n_q_heads, int64_t n_kv_heads) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw dim_error("gqa_causal_attend: rank-2 inputs required");
    const int64_t rows = q.dim(0);
    if (k.dim(0) != rows || v.dim(0) != rows)
        throw dim_error("gqa_causal_attend: sequence length mismatch");
    if (n_q_heads % n_kv_heads != 0)
        throw config_error("gqa_causal_attend: query heads not a multiple of kv heads");
    const int64_t head_dim = q.dim(1) / n_q_heads;
    if (q.dim(1) != n_q_heads * head_dim || k.dim(1) != n_kv_heads * head_dim ||
        v.dim(1) != n_kv_heads * head_dim)
        throw dim_error("gqa_causal_attend: projection widths inconsistent");
    const int64_t group = n_q_heads / n_kv_heads;
    const int64_t qw = n_q_heads * head_dim;
    const int64_t kw = n_kv_heads * head_dim;
    const float scj = 1.0f / std::sqrt(static_cast<float>(head_dim));

    const bool tracked = q.requires_grad() || k.requires_grad() || v.requires_grad();

    auto qd = q.data();
    auto kd = k.data();
    auto vd = v.data();
    std::vector<float> out(static_cast<size_t>(rows * qw), 0.0f);
    // probs saved per query head for backward: [h][i*rows + j], lower triangle
    auto probs = std::make_shared<std::vector<float>>();
    if (tracked) probs->assign(static_cast<size_t>(n_q_heads * rows * rows), 0.0f);

    std::vector<float> scores(static_cast<size_t>(rows));
    std::vector<float> prow(static_cast<size_t>(rows));
    for (int64_t h = 0; h < n_q_heads; ++h) {
        const int64_t kh = h / group;
        for (int64_t i = 0; i < rows; ++i) {
            const float* qr = qd.data() + i * qw + h * head_dim;
            for (int64_t j = 0; j <= i; ++j) {
                const float* kr = kd.data() + j * kw + kh * head_dim;
                double s = 0.0;
                for (int64_t c = 0; c < head_dim; ++c) s += static_cast<double>(qr[c]) * kr[c];
                scores[static_cast<size_t>(j)] = static_cast<float>(s) * scj;
            }
            kernels::softmax_row(std::span<const float>(scores.data(), static_cast<size_t>(i + 1)),
                                 std::span<float>(prow.data(), static_cast<size_t>(i + 1)));
            float* yr = out.data() + i * qw + h * head_dim;
            for (int64_t c = 0; c < head_dim; ++c) {
                double acc = 0.0;
                for (int64_t j = 0; j <= i; ++j)
                    acc += static_cast<double>(prow[static_cast<size_t>(j)]) *
                           vd[static_cast<size_t>(j * kw + kh * head_dim + c)];
                yr[c] = static_cast<float>(acc);
            }
            if (tracked)
                std::copy_n(prow.data(), i + 1,
                            probs->data() + (h * rows + i) * rows);
        }
    }

    return Tensor::make_op("gqa_causal_attend", {rows, qw}, std::move(out), {q, k, v},
                           [q, k, v, probs, rows, n_q_heads, head_dim, group, qw, kw,
                            scj](detail::Node& self) {
        auto qd2 = q.data();
        auto kd2 = k.data();
        auto vd2 = v.data();
        std::vector<float> gq(static_cast<size_t>(rows * qw), 0.0f);
        std::vector<float> gk(static_cast<size_t>(rows * kw), 0.0f);
        std::vector<float> gv(static_cast<size_t>(rows * kw), 0.0f);
        std::vector<double> dp(static_cast<size_t>(rows));
        for (int64_t h = 0; h < n_q_heads; ++h) {
            const int64_t kh = h / group;
            for (int64_t i = 0; i < rows; ++i) {
                const float* p = probs->data() + (h * rows + i) * rows;
                const float* gy = self.grad.data() + i * qw + h * head_dim;
                // dv and dp
                double pdot = 0.0;
                for (int64_t j = 0; j <= i; ++j) {
                    const float* vr = vd2.data() + j * kw + kh * head_dim;
                    float* gvr = gv.data() + j * kw + kh * head_dim;
                    double d = 0.0;
                    for (int64_t c = 0; c < head_dim; ++c) {
                        d += static_cast<double>(gy[c]) * vr[c];
                        gvr[c] += p[j] * gy[c];
                    }
                    dp[static_cast<size_t>(j)] = d;
                    pdot += d * p[j];
                }
                // softmax backward, then grads into q and k
                const float* qr = qd2.data() + i * qw + h * head_dim;
                float* gqr = gq.data() + i * qw + h * head_dim;
                for (int64_t j = 0; j <= i; ++j) {
                    double ds = p[j] * (dp[static_cast<size_t>(j)] - pdot) * scj;
                    if (ds == 0.0) continue;
                    const float* kr = kd2.data() + j * kw + kh * head_dim;
                    float* gkr = gk.data() + j * kw + kh * head_dim;
                    for (int64_t c = 0; c < head_dim; ++c) {
                        gqr[c] += static_cast<float>(ds * kr[c]);
                        gkr[c] += static_cast<float>(ds * qr[c]);
                    }
                }
            }
        }
        if (q.requires_grad()) q.node()->accumulate(gq);
        if (k.requires_grad()) k.node()->accumulate(gk);
        if (v.requires_grad()) v.node()->accumulate(gv);
    });
}

namespace {

// Incremental path: attend the new rows against cache + themselves.
Tensor attend_with_cache(const Tensor& q, const Tensor& k, const Tensor& v,
                         const AttentionParams& p, KVCache& cache) {
    const int64_t rows = q.dim(0);
    const int64_t qw = p.n_q_heads * p.head_dim;
    const int64_t group = p.group();
    const float scj = 1.0f / std::sqrt(static_cast<float>(p.head_dim));
    const int64_t t0 = cache.tokens();

    auto kd = k.data();
    auto vd = v.data();
    for (int64_t i = 0; i < rows; ++i)
        cache.append(kd.subspan(static_cast<size_t>(i * p.n_kv_heads * p.head_dim),
                                static_cast<size_t>(p.n_kv_heads * p.head_dim)),
                     vd.subspan(static_cast<size_t>(i * p.n_kv_heads * p.head_dim),
                                static_cast<size_t>(p.n_kv_heads * p.head_dim)));

    auto qd = q.data();
    std::vector<float> out(static_cast<size_t>(rows * qw));
    std::vector<float> scores;
    std::vector<float> prow;
    for (int64_t h = 0; h < p.n_q_heads; ++h) {
        const int64_t kh = h / group;
        auto khk = cache.keys(kh);
        auto khv = cache.values(kh);
        for (int64_t i = 0; i < rows; ++i) {
            const int64_t visible = t0 + i + 1;
            scores.resize(static_cast<size_t>(visible));
            prow.resize(static_cast<size_t>(visible));
            const float* qr = qd.data() + i * qw + h * p.head_dim;
            for (int64_t j = 0; j < visible; ++j) {
                const float* kr = khk.data() + j * p.head_dim;
                double s = 0.0;
                for (int64_t c = 0; c < p.head_dim; ++c) s += static_cast<double>(qr[c]) * kr[c];
                scores[static_cast<size_t>(j)] = static_cast<float>(s) * scj;
            }
            kernels::softmax_row(scores, prow);
            float* yr = out.data() + i * qw + h * p.head_dim;
            for (int64_t c = 0; c < p.head_dim; ++c) {
                double acc = 0.0;
                for (int64_t j = 0; j < visible; ++j)
                    acc += static_cast<double>(prow[static_cast<size_t>(j)]) *
                           khv[static_cast<size_t>(j * p.head_dim + c)];
                yr[c] = static_cast<float>(acc);
            }
        }
    }
    return Tensor::from_data({rows, qw}, std::move(out), false);
}

// untracked linear for the decode path
Tensor linear_raw(const Tensor& x, const Tensor& w) {
    const int64_t rows = x.dim(0), in = x.dim(1), out_f = w.dim(0);
    std::vector<float> y(static_cast<size_t>(rows * out_f));
    kernels::linear(x.data(), w.data(), y, rows, in, out_f);
    return Tensor::from_data({rows, out_f}, std::move(y), false);
}

} // namespace

Tensor attention_forward(const Tensor& x, const AttentionParams& params, KVCache* cache) {
    params.validate();
    if (x.rank() != 2 || x.dim(1) != params.d_model)
        throw dim_error("attention_forward: x " + shape_str(x.shape()) + " vs d_model " +
                        std::to_string(params.d_model));
    if (cache) {
        if (cache->n_kv_heads() != params.n_kv_heads || cache->head_dim() != params.head_dim)
            throw cache_error("attention_forward: cache heads/dims do not match params");
        Tensor q = linear_raw(x, params.q_proj);
        Tensor k = linear_raw(x, params.k_proj);
        Tensor v = linear_raw(x, params.v_proj);
        Tensor ctx = attend_with_cache(q, k, v, params, *cache);
        return linear_raw(ctx, params.o_proj);
    }
    Tensor q = linear(x, params.q_proj);
    Tensor k = linear(x, params.k_proj);
    Tensor v = linear(x, params.v_proj);
    Tensor ctx = gqa_causal_attend(q, k, v, params.n_q_heads, params.n_kv_heads);
    return linear(ctx, params.o_proj);
}

} // namespace jamba
