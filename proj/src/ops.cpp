#include "jamba/ops.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"

namespace jamba {

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw dim_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
}

std::vector<float> to_vec(std::span<const float> s) { return {s.begin(), s.end()}; }

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<float> out = to_vec(a.data());
    auto bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return Tensor::make_op("add", a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
        if (a.requires_grad()) a.node()->accumulate(self.grad);
        if (b.requires_grad()) b.node()->accumulate(self.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<float> out(a.numel());
    auto ad = a.data(), bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    return Tensor::make_op("mul", a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
        if (a.requires_grad()) {
            std::vector<float> g(self.grad.size());
            auto bd2 = b.data();
            for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * bd2[i];
            a.node()->accumulate(g);
        }
        if (b.requires_grad()) {
            std::vector<float> g(self.grad.size());
            auto ad2 = a.data();
            for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * ad2[i];
            b.node()->accumulate(g);
        }
    });
}

Tensor scale(const Tensor& a, float c) {
    std::vector<float> out(a.numel());
    auto ad = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * c;
    return Tensor::make_op("scale", a.shape(), std::move(out), {a}, [a, c](detail::Node& self) {
        std::vector<float> g(self.grad.size());
        for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * c;
        a.node()->accumulate(g);
    });
}

Tensor silu(const Tensor& x) {
    std::vector<float> out(x.numel());
    auto xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = kernels::siluf(xd[i]);
    return Tensor::make_op("silu", x.shape(), std::move(out), {x}, [x](detail::Node& self) {
        std::vector<float> g(self.grad.size());
        auto xd2 = x.data();
        for (size_t i = 0; i < g.size(); ++i) {
            float s = kernels::sigmoidf(xd2[i]);
            g[i] = self.grad[i] * s * (1.0f + xd2[i] * (1.0f - s));
        }
        x.node()->accumulate(g);
    });
}

Tensor softplus(const Tensor& x) {
    std::vector<float> out(x.numel());
    auto xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = kernels::softplusf(xd[i]);
    return Tensor::make_op("softplus", x.shape(), std::move(out), {x}, [x](detail::Node& self) {
        std::vector<float> g(self.grad.size());
        auto xd2 = x.data();
        for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * kernels::sigmoidf(xd2[i]);
        x.node()->accumulate(g);
    });
}

Tensor exp(const Tensor& x) {
    std::vector<float> out(x.numel());
    auto xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xd[i]);
    return Tensor::make_op("exp", x.shape(), std::move(out), {x}, [x](detail::Node& self) {
        std::vector<float> g(self.grad.size());
        for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * self.data[i];
        x.node()->accumulate(g);
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw dim_error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> acc(static_cast<size_t>(m * n), 0.0);
    auto ad = a.data(), bd = b.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
            double av = ad[static_cast<size_t>(i * k + kk)];
            for (int64_t j = 0; j < n; ++j)
                acc[static_cast<size_t>(i * n + j)] += av * bd[static_cast<size_t>(kk * n + j)];
        }
    std::vector<float> out(acc.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(acc[i]);
    return Tensor::make_op("matmul", {m, n}, std::move(out), {a, b},
                           [a, b, m, k, n](detail::Node& self) {
        auto ad2 = a.data();
        auto bd2 = b.data();
        if (a.requires_grad()) {
            // dA = g * B^T
            std::vector<float> ga(static_cast<size_t>(m * k));
            for (int64_t i = 0; i < m; ++i)
                for (int64_t kk = 0; kk < k; ++kk) {
                    double s = 0.0;
                    for (int64_t j = 0; j < n; ++j)
                        s += static_cast<double>(self.grad[static_cast<size_t>(i * n + j)]) *
                             bd2[static_cast<size_t>(kk * n + j)];
                    ga[static_cast<size_t>(i * k + kk)] = static_cast<float>(s);
                }
            a.node()->accumulate(ga);
        }
        if (b.requires_grad()) {
            // dB = A^T * g
            std::vector<double> gb(static_cast<size_t>(k * n), 0.0);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t kk = 0; kk < k; ++kk) {
                    double av = ad2[static_cast<size_t>(i * k + kk)];
                    for (int64_t j = 0; j < n; ++j)
                        gb[static_cast<size_t>(kk * n + j)] +=
                            av * self.grad[static_cast<size_t>(i * n + j)];
                }
            std::vector<float> gbf(gb.size());
            for (size_t i = 0; i < gb.size(); ++i) gbf[i] = static_cast<float>(gb[i]);
            b.node()->accumulate(gbf);
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw dim_error("linear: incompatible shapes " + shape_str(x.shape()) + " x " +
                        shape_str(w.shape()) + "^T");
    const int64_t rows = x.dim(0), in = x.dim(1), out_f = w.dim(0);
    std::vector<float> y(static_cast<size_t>(rows * out_f));
    kernels::linear(x.data(), w.data(), y, rows, in, out_f);
    return Tensor::make_op("linear", {rows, out_f}, std::move(y), {x, w},
                           [x, w, rows, in, out_f](detail::Node& self) {
        auto xd = x.data();
        auto wd = w.data();
        if (x.requires_grad()) {
            std::vector<float> gx(static_cast<size_t>(rows * in), 0.0f);
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t o = 0; o < out_f; ++o) {
                    float go = self.grad[static_cast<size_t>(i * out_f + o)];
                    if (go == 0.0f) continue;
                    const float* wr = wd.data() + o * in;
                    float* gr = gx.data() + i * in;
                    for (int64_t kk = 0; kk < in; ++kk) gr[kk] += go * wr[kk];
                }
            x.node()->accumulate(gx);
        }
        if (w.requires_grad()) {
            std::vector<float> gw(static_cast<size_t>(out_f * in), 0.0f);
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t o = 0; o < out_f; ++o) {
                    float go = self.grad[static_cast<size_t>(i * out_f + o)];
                    if (go == 0.0f) continue;
                    const float* xr = xd.data() + i * in;
                    float* gr = gw.data() + o * in;
                    for (int64_t kk = 0; kk < in; ++kk) gr[kk] += go * xr[kk];
                }
            w.node()->accumulate(gw);
        }
    });
}

Tensor softmax(const Tensor& x, int axis) {
    const int r = static_cast<int>(x.rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw dim_error("softmax: axis out of range for shape " + shape_str(x.shape()));
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    const int64_t alen = x.dim(axis);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);

    auto xd = x.data();
    std::vector<float> y(x.numel());
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            auto at = [&](int64_t a) -> size_t {
                return static_cast<size_t>((o * alen + a) * inner + i);
            };
            float m = xd[at(0)];
            for (int64_t a = 1; a < alen; ++a) m = std::max(m, xd[at(a)]);
            double denom = 0.0;
            for (int64_t a = 0; a < alen; ++a) {
                double e = std::exp(static_cast<double>(xd[at(a)]) - m);
                y[at(a)] = static_cast<float>(e);
                denom += e;
            }
            double inv = 1.0 / denom;
            for (int64_t a = 0; a < alen; ++a) y[at(a)] = static_cast<float>(y[at(a)] * inv);
        }
    return Tensor::make_op("softmax", x.shape(), std::move(y), {x},
                           [x, outer, alen, inner](detail::Node& self) {
        std::vector<float> gx(self.grad.size());
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < inner; ++i) {
                auto at = [&](int64_t a) -> size_t {
                    return static_cast<size_t>((o * alen + a) * inner + i);
                };
                double s = 0.0;
                for (int64_t a = 0; a < alen; ++a)
                    s += static_cast<double>(self.grad[at(a)]) * self.data[at(a)];
                for (int64_t a = 0; a < alen; ++a)
                    gx[at(a)] = static_cast<float>(self.data[at(a)] *
                                                   (static_cast<double>(self.grad[at(a)]) - s));
            }
        x.node()->accumulate(gx);
    });
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps) {
    if (eps <= 0.0f) throw config_error("rms_norm: eps must be > 0");
    if (x.rank() < 1 || weight.rank() != 1 || weight.dim(0) != x.dim(x.rank() - 1))
        throw dim_error("rms_norm: weight shape " + shape_str(weight.shape()) +
                        " incompatible with " + shape_str(x.shape()));
    const int64_t d = weight.dim(0);
    const int64_t rows = x.numel() / d;
    std::vector<float> y(x.numel());
    auto xd = x.data();
    for (int64_t r = 0; r < rows; ++r)
        kernels::rms_norm_row(xd.subspan(static_cast<size_t>(r * d), static_cast<size_t>(d)),
                              weight.data(),
                              eps,
                              std::span<float>(y).subspan(static_cast<size_t>(r * d),
                                                          static_cast<size_t>(d)));
    return Tensor::make_op("rms_norm", x.shape(), std::move(y), {x, weight},
                           [x, weight, eps, rows, d](detail::Node& self) {
        auto xd2 = x.data();
        auto wd = weight.data();
        std::vector<float> gx;
        std::vector<float> gw;
        if (x.requires_grad()) gx.assign(static_cast<size_t>(rows * d), 0.0f);
        if (weight.requires_grad()) gw.assign(static_cast<size_t>(d), 0.0f);
        for (int64_t r = 0; r < rows; ++r) {
            const float* xr = xd2.data() + r * d;
            const float* gr = self.grad.data() + r * d;
            double ms = 0.0;
            for (int64_t j = 0; j < d; ++j) ms += static_cast<double>(xr[j]) * xr[j];
            ms /= static_cast<double>(d);
            double inv = 1.0 / std::sqrt(ms + static_cast<double>(eps));
            if (x.requires_grad()) {
                double s = 0.0;
                for (int64_t j = 0; j < d; ++j)
                    s += static_cast<double>(gr[j]) * wd[j] * xr[j];
                double c = inv * inv * inv * s / static_cast<double>(d);
                for (int64_t j = 0; j < d; ++j)
                    gx[static_cast<size_t>(r * d + j)] =
                        static_cast<float>(inv * wd[j] * gr[j] - c * xr[j]);
            }
            if (weight.requires_grad())
                for (int64_t j = 0; j < d; ++j)
                    gw[static_cast<size_t>(j)] += static_cast<float>(
                        static_cast<double>(gr[j]) * xr[j] * inv);
        }
        if (x.requires_grad()) x.node()->accumulate(gx);
        if (weight.requires_grad()) weight.node()->accumulate(gw);
    });
}

Tensor embedding(const Tensor& table, std::span<const int32_t> tokens) {
    if (table.rank() != 2)
        throw dim_error("embedding: table must be rank 2, got " + shape_str(table.shape()));
    const int64_t vocab = table.dim(0), d = table.dim(1);
    for (int32_t t : tokens)
        if (t < 0 || t >= vocab)
            throw input_error("token id " + std::to_string(t) + " out of range [0," +
                              std::to_string(vocab) + ")");
    const int64_t rows = static_cast<int64_t>(tokens.size());
    std::vector<float> out(static_cast<size_t>(rows * d));
    auto td = table.data();
    for (int64_t i = 0; i < rows; ++i)
        std::copy_n(td.data() + static_cast<int64_t>(tokens[i]) * d, d, out.data() + i * d);
    std::vector<int32_t> toks(tokens.begin(), tokens.end());
    return Tensor::make_op("embedding", {rows, d}, std::move(out), {table},
                           [table, toks, d](detail::Node& self) {
        std::vector<float> gt(static_cast<size_t>(table.numel()), 0.0f);
        for (size_t i = 0; i < toks.size(); ++i) {
            float* dst = gt.data() + static_cast<int64_t>(toks[i]) * d;
            const float* src = self.grad.data() + static_cast<int64_t>(i) * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        table.node()->accumulate(gt);
    });
}

Tensor slice_cols(const Tensor& x, int64_t begin, int64_t end) {
    if (x.rank() != 2)
        throw dim_error("slice_cols: rank-2 tensor required, got " + shape_str(x.shape()));
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (begin < 0 || end > cols || begin >= end)
        throw dim_error("slice_cols: range [" + std::to_string(begin) + "," +
                        std::to_string(end) + ") invalid for " + shape_str(x.shape()));
    const int64_t w = end - begin;
    std::vector<float> out(static_cast<size_t>(rows * w));
    auto xd = x.data();
    for (int64_t i = 0; i < rows; ++i)
        std::copy_n(xd.data() + i * cols + begin, w, out.data() + i * w);
    return Tensor::make_op("slice_cols", {rows, w}, std::move(out), {x},
                           [x, begin, rows, cols, w](detail::Node& self) {
        std::vector<float> gx(static_cast<size_t>(rows * cols), 0.0f);
        for (int64_t i = 0; i < rows; ++i)
            std::copy_n(self.grad.data() + i * w, w, gx.data() + i * cols + begin);
        x.node()->accumulate(gx);
    });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    return Tensor::make_op("sum", {}, {static_cast<float>(acc)}, {x}, [x](detail::Node& self) {
        std::vector<float> g(static_cast<size_t>(x.numel()), self.grad[0]);
        x.node()->accumulate(g);
    });
}

Tensor sum_squares(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += static_cast<double>(v) * v;
    return Tensor::make_op("sum_squares", {}, {static_cast<float>(acc)}, {x},
                           [x](detail::Node& self) {
        std::vector<float> g(static_cast<size_t>(x.numel()));
        auto xd = x.data();
        for (size_t i = 0; i < g.size(); ++i) g[i] = 2.0f * xd[i] * self.grad[0];
        x.node()->accumulate(g);
    });
}

Tensor cross_entropy_mean(const Tensor& logits, std::span<const int32_t> targets) {
    if (logits.rank() != 2)
        throw dim_error("cross_entropy: logits must be [L,V], got " + shape_str(logits.shape()));
    const int64_t rows = logits.dim(0), vocab = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != rows)
        throw dim_error("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(rows) + " rows");
    for (int32_t t : targets)
        if (t < 0 || t >= vocab)
            throw input_error("target id " + std::to_string(t) + " out of range");
    auto xd = logits.data();
    double total = 0.0;
    for (int64_t i = 0; i < rows; ++i) {
        const float* row = xd.data() + i * vocab;
        float m = row[0];
        for (int64_t v = 1; v < vocab; ++v) m = std::max(m, row[v]);
        double denom = 0.0;
        for (int64_t v = 0; v < vocab; ++v) denom += std::exp(static_cast<double>(row[v]) - m);
        total += (m + std::log(denom)) - static_cast<double>(row[targets[static_cast<size_t>(i)]]);
    }
    std::vector<int32_t> tg(targets.begin(), targets.end());
    float loss = static_cast<float>(total / static_cast<double>(rows));
    return Tensor::make_op("cross_entropy", {}, {loss}, {logits},
                           [logits, tg, rows, vocab](detail::Node& self) {
        auto xd2 = logits.data();
        std::vector<float> g(static_cast<size_t>(rows * vocab));
        const double scale_g = static_cast<double>(self.grad[0]) / static_cast<double>(rows);
        std::vector<float> p(static_cast<size_t>(vocab));
        for (int64_t i = 0; i < rows; ++i) {
            kernels::softmax_row(
                std::span<const float>(xd2.data() + i * vocab, static_cast<size_t>(vocab)), p);
            for (int64_t v = 0; v < vocab; ++v)
                g[static_cast<size_t>(i * vocab + v)] = static_cast<float>(p[static_cast<size_t>(v)] * scale_g);
            g[static_cast<size_t>(i * vocab + tg[static_cast<size_t>(i)])] -=
                static_cast<float>(scale_g);
        }
        logits.node()->accumulate(g);
    });
}

Tensor topk_softmax(const Tensor& logits, std::span<const int32_t> indices, int64_t k) {
    if (logits.rank() != 2)
        throw dim_error("topk_softmax: logits must be [L,E]");
    const int64_t rows = logits.dim(0), experts = logits.dim(1);
    if (static_cast<int64_t>(indices.size()) != rows * k)
        throw dim_error("topk_softmax: index count mismatch");
    auto xd = logits.data();
    std::vector<float> w(static_cast<size_t>(rows * k));
    std::vector<float> z(static_cast<size_t>(k));
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < k; ++j)
            z[static_cast<size_t>(j)] =
                xd[static_cast<size_t>(i * experts + indices[static_cast<size_t>(i * k + j)])];
        kernels::softmax_row(z, std::span<float>(w).subspan(static_cast<size_t>(i * k),
                                                            static_cast<size_t>(k)));
    }
    std::vector<int32_t> idx(indices.begin(), indices.end());
    return Tensor::make_op("topk_softmax", {rows, k}, std::move(w), {logits},
                           [logits, idx, rows, experts, k](detail::Node& self) {
        std::vector<float> gl(static_cast<size_t>(rows * experts), 0.0f);
        for (int64_t i = 0; i < rows; ++i) {
            const float* wi = self.data.data() + i * k;
            const float* gi = self.grad.data() + i * k;
            double s = 0.0;
            for (int64_t j = 0; j < k; ++j) s += static_cast<double>(gi[j]) * wi[j];
            for (int64_t j = 0; j < k; ++j) {
                double dz = wi[j] * (static_cast<double>(gi[j]) - s);
                gl[static_cast<size_t>(i * experts + idx[static_cast<size_t>(i * k + j)])] +=
                    static_cast<float>(dz);
            }
        }
        logits.node()->accumulate(gl);
    });
}

Tensor weighted_combine(const Tensor& rows_t, const Tensor& w) {
    if (rows_t.rank() != 2 || w.rank() != 2)
        throw dim_error("weighted_combine: rank-2 inputs required");
    const int64_t tokens = w.dim(0), k = w.dim(1), d = rows_t.dim(1);
    if (rows_t.dim(0) != tokens * k)
        throw dim_error("weighted_combine: rows " + shape_str(rows_t.shape()) +
                        " vs weights " + shape_str(w.shape()));
    std::vector<float> y(static_cast<size_t>(tokens * d), 0.0f);
    auto rd = rows_t.data();
    auto wd = w.data();
    for (int64_t t = 0; t < tokens; ++t)
        for (int64_t j = 0; j < k; ++j) {
            float wv = wd[static_cast<size_t>(t * k + j)];
            const float* src = rd.data() + (t * k + j) * d;
            float* dst = y.data() + t * d;
            for (int64_t c = 0; c < d; ++c) dst[c] += wv * src[c];
        }
    return Tensor::make_op("weighted_combine", {tokens, d}, std::move(y), {rows_t, w},
                           [rows_t, w, tokens, k, d](detail::Node& self) {
        auto rd2 = rows_t.data();
        auto wd2 = w.data();
        if (rows_t.requires_grad()) {
            std::vector<float> gr(static_cast<size_t>(tokens * k * d));
            for (int64_t t = 0; t < tokens; ++t)
                for (int64_t j = 0; j < k; ++j) {
                    float wv = wd2[static_cast<size_t>(t * k + j)];
                    const float* gy = self.grad.data() + t * d;
                    float* dst = gr.data() + (t * k + j) * d;
                    for (int64_t c = 0; c < d; ++c) dst[c] = wv * gy[c];
                }
            rows_t.node()->accumulate(gr);
        }
        if (w.requires_grad()) {
            std::vector<float> gw(static_cast<size_t>(tokens * k));
            for (int64_t t = 0; t < tokens; ++t)
                for (int64_t j = 0; j < k; ++j) {
                    const float* gy = self.grad.data() + t * d;
                    const float* src = rd2.data() + (t * k + j) * d;
                    double s = 0.0;
                    for (int64_t c = 0; c < d; ++c) s += static_cast<double>(gy[c]) * src[c];
                    gw[static_cast<size_t>(t * k + j)] = static_cast<float>(s);
                }
            w.node()->accumulate(gw);
        }
    });
}

ConvResult causal_conv1d(const Tensor& x, const Tensor& kernel,
                         const std::vector<float>* state_in) {
    if (x.rank() != 2 || kernel.rank() != 2 || x.dim(1) != kernel.dim(1))
        throw dim_error("causal_conv1d: x " + shape_str(x.shape()) + " vs kernel " +
                        shape_str(kernel.shape()));
    const int64_t rows = x.dim(0), channels = x.dim(1), width = kernel.dim(0);
    if (width < 1) throw config_error("causal_conv1d: kernel width must be >= 1");
    const size_t state_len = static_cast<size_t>((width - 1) * channels);
    std::vector<float> state(state_len, 0.0f);
    if (state_in) {
        if (state_in->size() != state_len)
            throw cache_error("causal_conv1d: state has " + std::to_string(state_in->size()) +
                              " values, expected " + std::to_string(state_len));
        state = *state_in;
    }
    std::vector<float> y(static_cast<size_t>(rows * channels));
    kernels::causal_conv(x.data(), kernel.data(), state, y, rows, channels, width);

    ConvResult res;
    if (state_in) {
        // continuation from a live state is inference-only: never taped
        res.y = Tensor::from_data(x.shape(), std::move(y), false);
    } else {
        res.y = Tensor::make_op("causal_conv1d", x.shape(), std::move(y), {x, kernel},
                                [x, kernel, rows, channels, width](detail::Node& self) {
            auto xd = x.data();
            auto kd = kernel.data();
            if (kernel.requires_grad()) {
                std::vector<float> gk(static_cast<size_t>(width * channels), 0.0f);
                for (int64_t t = 0; t < rows; ++t)
                    for (int64_t w = 0; w < width; ++w) {
                        int64_t src = t - (width - 1) + w;
                        if (src < 0) continue;
                        for (int64_t c = 0; c < channels; ++c)
                            gk[static_cast<size_t>(w * channels + c)] +=
                                self.grad[static_cast<size_t>(t * channels + c)] *
                                xd[static_cast<size_t>(src * channels + c)];
                    }
                kernel.node()->accumulate(gk);
            }
            if (x.requires_grad()) {
                std::vector<float> gx(static_cast<size_t>(rows * channels), 0.0f);
                for (int64_t t = 0; t < rows; ++t)
                    for (int64_t w = 0; w < width; ++w) {
                        int64_t src = t - (width - 1) + w;
                        if (src < 0) continue;
                        for (int64_t c = 0; c < channels; ++c)
                            gx[static_cast<size_t>(src * channels + c)] +=
                                self.grad[static_cast<size_t>(t * channels + c)] *
                                kd[static_cast<size_t>(w * channels + c)];
                    }
                x.node()->accumulate(gx);
            }
        });
    }
    res.state = std::move(state);
    return res;
}

} // namespace jamba
