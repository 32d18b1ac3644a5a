#include "mecam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mecam/error.hpp"

namespace mecam {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

/// Records `out` on the active tape when any input requires grad.
template <typename Fn>
void record(const char* name, std::vector<Tensor> inputs, const Tensor& out, Fn&& fn) {
    out.check_finite(name);
    Tape::active()->record(name, std::move(inputs), out, std::forward<Fn>(fn));
}

struct ConvGeometry {
    std::size_t n, c, h, w;
    std::size_t o, k;
    std::size_t oh, ow;
    int stride, pad;
    std::size_t patch() const { return c * k * k; }
    std::size_t positions() const { return oh * ow; }
};

/// Unrolls one sample into a positions x patch matrix (zero padded).
void im2col(const float* img, const ConvGeometry& g, std::vector<float>& cols) {
    const std::size_t kk = g.patch();
    cols.assign(g.positions() * kk, 0.0f);
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
            float* row = cols.data() + (oy * g.ow + ox) * kk;
            for (std::size_t ch = 0; ch < g.c; ++ch) {
                const float* plane = img + ch * g.h * g.w;
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
                        if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                        row[(ch * g.k + ky) * g.k + kx] = plane[iy * g.w + ix];
                    }
                }
            }
        }
    }
}

/// Scatter-adds a positions x patch gradient matrix back onto the image gradient.
void col2im(const std::vector<double>& gcols, const ConvGeometry& g, float* gimg) {
    const std::size_t kk = g.patch();
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const double* row = gcols.data() + (oy * g.ow + ox) * kk;
            for (std::size_t ch = 0; ch < g.c; ++ch) {
                float* plane = gimg + ch * g.h * g.w;
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
                        if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                        plane[iy * g.w + ix] += static_cast<float>(row[(ch * g.k + ky) * g.k + kx]);
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    if (stride < 1 || padding < 0) {
        throw ShapeError("conv2d: stride must be positive and padding non-negative");
    }
    const auto& is = input.shape();
    const auto& ws = weight.shape();
    if (is[1] != ws[1] || ws[2] != ws[3]) {
        throw ShapeError("conv2d: input " + shape_str(is) + " incompatible with weight " + shape_str(ws));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != ws[0])) {
        throw ShapeError("conv2d: bias " + (bias.defined() ? shape_str(bias.shape()) : std::string("<undefined>")) +
                         " does not match weight " + shape_str(ws));
    }
    const std::size_t k = ws[2];
    const std::size_t padded_h = is[2] + 2 * static_cast<std::size_t>(padding);
    const std::size_t padded_w = is[3] + 2 * static_cast<std::size_t>(padding);
    if (padded_h < k || padded_w < k) {
        throw ShapeError("conv2d: kernel " + shape_str(ws) + " does not fit padded input " + shape_str(is));
    }
    ConvGeometry g{is[0], is[1], is[2], is[3], ws[0], k,
                   (padded_h - k) / stride + 1, (padded_w - k) / stride + 1, stride, padding};

    Tensor out(Shape{g.n, g.o, g.oh, g.ow});
    const auto x = input.data();
    const auto wv = weight.data();
    const bool has_bias = bias.defined();
    const auto bv = has_bias ? bias.data() : std::span<const float>{};
    auto y = out.data();
    const std::size_t kk = g.patch();
    const std::size_t positions = g.positions();
    std::vector<float> cols;
    for (std::size_t n = 0; n < g.n; ++n) {
        im2col(x.data() + n * g.c * g.h * g.w, g, cols);
        for (std::size_t oc = 0; oc < g.o; ++oc) {
            const float* wrow = wv.data() + oc * kk;
            float* yplane = y.data() + (n * g.o + oc) * positions;
            for (std::size_t p = 0; p < positions; ++p) {
                const float* crow = cols.data() + p * kk;
                double acc = has_bias ? bv[oc] : 0.0;
                for (std::size_t i = 0; i < kk; ++i) acc += static_cast<double>(wrow[i]) * crow[i];
                yplane[p] = static_cast<float>(acc);
            }
        }
    }

    if (Tape::wants({&input, &weight, &bias})) {
        record("conv2d", {input, weight, bias}, out, [input, weight, bias, out, g]() mutable {
            const auto gy = out.grad();
            const std::size_t kk = g.patch();
            const std::size_t positions = g.positions();
            const bool need_w = weight.requires_grad();
            const bool need_b = bias.requires_grad();
            const bool need_x = input.requires_grad();
            std::vector<double> gw(need_w ? g.o * kk : 0, 0.0);
            std::vector<double> gb(g.o, 0.0);
            std::vector<float> cols;
            std::vector<double> gcols;
            const auto wv = weight.data();
            for (std::size_t n = 0; n < g.n; ++n) {
                const float* gyn = gy.data() + n * g.o * positions;
                if (need_w) im2col(input.data().data() + n * g.c * g.h * g.w, g, cols);
                if (need_x) gcols.assign(positions * kk, 0.0);
                for (std::size_t oc = 0; oc < g.o; ++oc) {
                    const float* gplane = gyn + oc * positions;
                    const float* wrow = wv.data() + oc * kk;
                    double* gwrow = need_w ? gw.data() + oc * kk : nullptr;
                    for (std::size_t p = 0; p < positions; ++p) {
                        const double gval = gplane[p];
                        gb[oc] += gval;
                        if (gval == 0.0) continue;
                        if (need_w) {
                            const float* crow = cols.data() + p * kk;
                            for (std::size_t i = 0; i < kk; ++i) gwrow[i] += gval * crow[i];
                        }
                        if (need_x) {
                            double* grow = gcols.data() + p * kk;
                            for (std::size_t i = 0; i < kk; ++i) grow[i] += gval * wrow[i];
                        }
                    }
                }
                if (need_x) col2im(gcols, g, input.grad().data() + n * g.c * g.h * g.w);
            }
            if (need_w) {
                auto gwt = weight.grad();
                for (std::size_t i = 0; i < gw.size(); ++i) gwt[i] += static_cast<float>(gw[i]);
            }
            if (need_b) {
                auto gbt = bias.grad();
                for (std::size_t i = 0; i < gb.size(); ++i) gbt[i] += static_cast<float>(gb[i]);
            }
        });
    }
    return out;
}

Tensor max_pool2d(const Tensor& input) {
    require_rank(input, 4, "max_pool2d");
    const auto& s = input.shape();
    if (s[2] % 2 != 0 || s[3] % 2 != 0) {
        throw ShapeError("max_pool2d: spatial extents must be even, got " + shape_str(s));
    }
    const std::size_t planes = s[0] * s[1];
    const std::size_t h = s[2], w = s[3], oh = h / 2, ow = w / 2;
    Tensor out(Shape{s[0], s[1], oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    const auto x = input.data();
    auto y = out.data();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const float* src = x.data() + pl * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (2 * oy) * w + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if (src[idx] > src[best]) best = idx;  // strict: first max wins
                    }
                }
                const std::size_t o = pl * oh * ow + oy * ow + ox;
                y[o] = src[best];
                (*argmax)[o] = pl * h * w + best;
            }
        }
    }
    if (Tape::wants({&input})) {
        record("max_pool2d", {input}, out, [input, out, argmax]() mutable {
            auto gx = input.grad();
            const auto gy = out.grad();
            for (std::size_t o = 0; o < gy.size(); ++o) gx[(*argmax)[o]] += gy[o];
        });
    }
    return out;
}

Tensor global_avg_pool(const Tensor& input) {
    require_rank(input, 4, "global_avg_pool");
    const auto& s = input.shape();
    const std::size_t planes = s[0] * s[1];
    const std::size_t area = s[2] * s[3];
    Tensor out(Shape{s[0], s[1]});
    const auto x = input.data();
    auto y = out.data();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        double acc = 0.0;
        for (std::size_t i = 0; i < area; ++i) acc += x[pl * area + i];
        y[pl] = static_cast<float>(acc / static_cast<double>(area));
    }
    if (Tape::wants({&input})) {
        record("global_avg_pool", {input}, out, [input, out, planes, area]() mutable {
            auto gx = input.grad();
            const auto gy = out.grad();
            const float inv = 1.0f / static_cast<float>(area);
            for (std::size_t pl = 0; pl < planes; ++pl) {
                const float g = gy[pl] * inv;
                for (std::size_t i = 0; i < area; ++i) gx[pl * area + i] += g;
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& input, int axis) {
    const int rank = static_cast<int>(input.rank());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw ShapeError("softmax: axis out of range for shape " + shape_str(input.shape()));
    }
    const auto& s = input.shape();
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < rank; ++i) inner *= s[i];
    const std::size_t len = s[axis];

    Tensor out(s);
    const auto x = input.data();
    auto y = out.data();
    std::vector<double> e(len);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            float mx = -std::numeric_limits<float>::infinity();
            for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                e[j] = std::exp(static_cast<double>(x[base + j * inner]) - mx);
                total += e[j];
            }
            for (std::size_t j = 0; j < len; ++j) y[base + j * inner] = static_cast<float>(e[j] / total);
        }
    }
    if (Tape::wants({&input})) {
        record("softmax", {input}, out, [input, out, outer, inner, len]() mutable {
            auto gx = input.grad();
            const auto gy = out.grad();
            const auto y = out.data();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < len; ++j) {
                        dot += static_cast<double>(gy[base + j * inner]) * y[base + j * inner];
                    }
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t idx = base + j * inner;
                        gx[idx] += static_cast<float>(y[idx] * (gy[idx] - dot));
                    }
                }
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    const auto x = input.data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
    if (Tape::wants({&input})) {
        record("relu", {input}, out, [input, out]() mutable {
            auto gx = input.grad();
            const auto gy = out.grad();
            const auto x = input.data();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                if (x[i] > 0.0f) gx[i] += gy[i];
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "linear input");
    require_rank(weight, 2, "linear weight");
    const std::size_t n = input.dim(0), in = input.dim(1), o = weight.dim(0);
    if (weight.dim(1) != in || bias.rank() != 1 || bias.dim(0) != o) {
        throw ShapeError("linear: input " + shape_str(input.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
    }
    Tensor out(Shape{n, o});
    const auto x = input.data();
    const auto w = weight.data();
    const auto b = bias.data();
    auto y = out.data();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < o; ++c) {
            double acc = b[c];
            for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(w[c * in + i]) * x[r * in + i];
            y[r * o + c] = static_cast<float>(acc);
        }
    }
    if (Tape::wants({&input, &weight, &bias})) {
        record("linear", {input, weight, bias}, out, [input, weight, bias, out, n, in, o]() mutable {
            const auto gy = out.grad();
            const auto x = input.data();
            const auto w = weight.data();
            if (input.requires_grad()) {
                auto gx = input.grad();
                for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t i = 0; i < in; ++i) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < o; ++c) acc += static_cast<double>(gy[r * o + c]) * w[c * in + i];
                        gx[r * in + i] += static_cast<float>(acc);
                    }
                }
            }
            if (weight.requires_grad()) {
                auto gw = weight.grad();
                for (std::size_t c = 0; c < o; ++c) {
                    for (std::size_t i = 0; i < in; ++i) {
                        double acc = 0.0;
                        for (std::size_t r = 0; r < n; ++r) acc += static_cast<double>(gy[r * o + c]) * x[r * in + i];
                        gw[c * in + i] += static_cast<float>(acc);
                    }
                }
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::size_t c = 0; c < o; ++c) {
                    double acc = 0.0;
                    for (std::size_t r = 0; r < n; ++r) acc += gy[r * o + c];
                    gb[c] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

Tensor batch_stats_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                        const Tensor& running_mean, const Tensor& running_var, bool training,
                        BatchMoments* moments) {
    const auto& s = input.shape();
    if (s.size() != 2 && s.size() != 4) {
        throw ShapeError("batch_stats_norm: expected rank 2 or 4, got " + shape_str(s));
    }
    const std::size_t n = s[0], c = s[1];
    const std::size_t area = s.size() == 4 ? s[2] * s[3] : 1;
    for (const Tensor* p : {&gamma, &beta, &running_mean, &running_var}) {
        if (p->rank() != 1 || p->dim(0) != c) {
            throw ShapeError("batch_stats_norm: parameter " + shape_str(p->shape()) +
                             " does not match channels of " + shape_str(s));
        }
    }
    const std::size_t m = n * area;
    const auto x = input.data();
    const auto gm = gamma.data();
    const auto bt = beta.data();

    std::vector<float> mean(c), inv_std(c);
    if (training) {
        if (moments) {
            moments->mean.assign(c, 0.0f);
            moments->var.assign(c, 0.0f);
        }
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const float* p = x.data() + (b * c + ch) * area;
                for (std::size_t i = 0; i < area; ++i) acc += p[i];
            }
            const double mu = acc / static_cast<double>(m);
            double sq = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const float* p = x.data() + (b * c + ch) * area;
                for (std::size_t i = 0; i < area; ++i) {
                    const double d = p[i] - mu;
                    sq += d * d;
                }
            }
            const double var = sq / static_cast<double>(m);
            mean[ch] = static_cast<float>(mu);
            inv_std[ch] = static_cast<float>(1.0 / std::sqrt(var + kNormEpsilon));
            if (moments) {
                moments->mean[ch] = static_cast<float>(mu);
                moments->var[ch] = static_cast<float>(var);
            }
        }
    } else {
        const auto rm = running_mean.data();
        const auto rv = running_var.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = rm[ch];
            inv_std[ch] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + kNormEpsilon));
        }
    }

    Tensor out(s);
    auto y = out.data();
    auto xhat = std::make_shared<std::vector<float>>(x.size());
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * area;
            for (std::size_t i = 0; i < area; ++i) {
                const float xh = (x[base + i] - mean[ch]) * inv_std[ch];
                (*xhat)[base + i] = xh;
                y[base + i] = gm[ch] * xh + bt[ch];
            }
        }
    }

    if (Tape::wants({&input, &gamma, &beta})) {
        record("batch_stats_norm", {input, gamma, beta}, out,
               [input, gamma, beta, out, xhat, inv_std, n, c, area, m, training]() mutable {
                   const auto gy = out.grad();
                   const auto gm = gamma.data();
                   std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
                   for (std::size_t b = 0; b < n; ++b) {
                       for (std::size_t ch = 0; ch < c; ++ch) {
                           const std::size_t base = (b * c + ch) * area;
                           for (std::size_t i = 0; i < area; ++i) {
                               sum_dy[ch] += gy[base + i];
                               sum_dy_xhat[ch] += static_cast<double>(gy[base + i]) * (*xhat)[base + i];
                           }
                       }
                   }
                   if (gamma.requires_grad()) {
                       auto gg = gamma.grad();
                       for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += static_cast<float>(sum_dy_xhat[ch]);
                   }
                   if (beta.requires_grad()) {
                       auto gb = beta.grad();
                       for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += static_cast<float>(sum_dy[ch]);
                   }
                   if (!input.requires_grad()) return;
                   auto gx = input.grad();
                   const double inv_m = 1.0 / static_cast<double>(m);
                   for (std::size_t b = 0; b < n; ++b) {
                       for (std::size_t ch = 0; ch < c; ++ch) {
                           const std::size_t base = (b * c + ch) * area;
                           const double k = static_cast<double>(gm[ch]) * inv_std[ch];
                           for (std::size_t i = 0; i < area; ++i) {
                               double d = gy[base + i];
                               if (training) d -= (sum_dy[ch] + (*xhat)[base + i] * sum_dy_xhat[ch]) * inv_m;
                               gx[base + i] += static_cast<float>(k * d);
                           }
                       }
                   }
               });
    }
    return out;
}

namespace {

template <typename Op, typename Back>
Tensor elementwise(const char* name, const Tensor& a, const Tensor& b, Op op, Back back) {
    require_same_shape(a, b, name);
    Tensor out(a.shape());
    const auto av = a.data();
    const auto bv = b.data();
    auto y = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = op(av[i], bv[i]);
    if (Tape::wants({&a, &b})) {
        record(name, {a, b}, out, [a, b, out, back]() mutable { back(a, b, out); });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise(
        "add", a, b, [](float x, float y) { return x + y; },
        [](const Tensor& a, const Tensor& b, const Tensor& out) {
            const auto gy = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise(
        "sub", a, b, [](float x, float y) { return x - y; },
        [](const Tensor& a, const Tensor& b, const Tensor& out) {
            const auto gy = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise(
        "mul", a, b, [](float x, float y) { return x * y; },
        [](const Tensor& a, const Tensor& b, const Tensor& out) {
            const auto gy = out.grad();
            const auto av = a.data();
            const auto bv = b.data();
            // a and b may be the same tensor (w * w); grads accumulate either way.
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
            }
        });
}

Tensor scale(const Tensor& a, float factor) {
    Tensor out(a.shape());
    const auto x = a.data();
    auto y = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * factor;
    if (Tape::wants({&a})) {
        record("scale", {a}, out, [a, out, factor]() mutable {
            auto ga = a.grad();
            const auto gy = out.grad();
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * factor;
        });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (Tape::wants({&a})) {
        record("sum", {a}, out, [a, out]() mutable {
            auto ga = a.grad();
            const float g = out.grad()[0];
            for (auto& v : ga) v += g;
        });
    }
    return out;
}

Tensor mse_mean(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse_mean");
    const auto av = a.data();
    const auto bv = b.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = static_cast<double>(av[i]) - bv[i];
        acc += d * d;
    }
    const double count = static_cast<double>(av.size());
    Tensor out = Tensor::scalar(static_cast<float>(acc / count));
    if (Tape::wants({&a, &b})) {
        record("mse_mean", {a, b}, out, [a, b, out, count]() mutable {
            const double g = out.grad()[0] * 2.0 / count;
            const auto av = a.data();
            const auto bv = b.data();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += static_cast<float>(g * (av[i] - bv[i]));
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= static_cast<float>(g * (av[i] - bv[i]));
            }
        });
    }
    return out;
}

double logsumexp(std::span<const float> values) {
    if (values.empty()) throw ShapeError("logsumexp of empty vector");
    const float mx = *std::max_element(values.begin(), values.end());
    double acc = 0.0;
    for (float v : values) acc += std::exp(static_cast<double>(v) - mx);
    return mx + std::log(acc);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (labels.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
    }
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= c) {
            throw DataError(DataErrorKind::label_out_of_range,
                            "cross_entropy label " + std::to_string(label) + " not in [0, " + std::to_string(c) + ")");
        }
    }
    const auto x = logits.data();
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = x.subspan(r * c, c);
        acc += logsumexp(row) - row[labels[r]];
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
    if (Tape::wants({&logits})) {
        std::vector<int> kept(labels.begin(), labels.end());
        record("cross_entropy", {logits}, out, [logits, out, kept, n, c]() mutable {
            auto gx = logits.grad();
            const auto x = logits.data();
            const double g = out.grad()[0] / static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r) {
                const auto row = x.subspan(r * c, c);
                const double lse = logsumexp(row);
                for (std::size_t j = 0; j < c; ++j) {
                    double p = std::exp(static_cast<double>(row[j]) - lse);
                    if (static_cast<int>(j) == kept[r]) p -= 1.0;
                    gx[r * c + j] += static_cast<float>(g * p);
                }
            }
        });
    }
    return out;
}

}  // namespace mecam
