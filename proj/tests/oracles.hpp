#pragma once

// Brute-force reference implementations. Deliberately naive: plain loops,
// double precision, no sharing with the library's kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// NCHW input, OIKK weight, optional bias (empty = none). Returns NCHW output.
inline std::vector<double> conv2d(const std::vector<float>& in, std::size_t n, std::size_t c, std::size_t h,
                                  std::size_t w, const std::vector<float>& weight, std::size_t o, std::size_t k,
                                  const std::vector<float>& bias, int stride, int pad, std::size_t& oh,
                                  std::size_t& ow) {
    oh = (h + 2 * pad - k) / stride + 1;
    ow = (w + 2 * pad - k) / stride + 1;
    std::vector<double> out(n * o * oh * ow, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    double acc = bias.empty() ? 0.0 : bias[oc];
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long iy = static_cast<long>(y * stride + ky) - pad;
                                const long ix = static_cast<long>(x * stride + kx) - pad;
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                                    continue;
                                acc += static_cast<double>(in[((b * c + ic) * h + iy) * w + ix]) *
                                       weight[((oc * c + ic) * k + ky) * k + kx];
                            }
                    out[((b * o + oc) * oh + y) * ow + x] = acc;
                }
    return out;
}

inline std::vector<double> max_pool2(const std::vector<float>& in, std::size_t planes, std::size_t h, std::size_t w) {
    std::vector<double> out;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; y += 2)
            for (std::size_t x = 0; x < w; x += 2) {
                double m = -INFINITY;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) m = std::max<double>(m, in[(p * h + y + dy) * w + x + dx]);
                out.push_back(m);
            }
    return out;
}

inline std::vector<double> global_avg_pool(const std::vector<float>& in, std::size_t planes, std::size_t hw) {
    std::vector<double> out(planes, 0.0);
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < hw; ++i) out[p] += in[p * hw + i];
        out[p] /= static_cast<double>(hw);
    }
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& v) {
    double m = -INFINITY;
    for (double x : v) m = std::max(m, x);
    double z = 0.0;
    for (double x : v) z += std::exp(x - m);
    std::vector<double> out;
    for (double x : v) out.push_back(std::exp(x - m) / z);
    return out;
}

// Half-pixel-center bilinear sample of a row-major plane, written from the formula.
inline double bilinear_at(const std::vector<float>& src, std::size_t sh, std::size_t sw, std::size_t th,
                          std::size_t tw, std::size_t i, std::size_t j) {
    auto coord = [](std::size_t dst, std::size_t src_n, std::size_t dst_n) {
        double s = (dst + 0.5) * static_cast<double>(src_n) / static_cast<double>(dst_n) - 0.5;
        return std::clamp(s, 0.0, static_cast<double>(src_n - 1));
    };
    const double sy = coord(i, sh, th), sx = coord(j, sw, tw);
    const std::size_t y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
    const std::size_t y1 = std::min(y0 + 1, sh - 1), x1 = std::min(x0 + 1, sw - 1);
    const double fy = sy - y0, fx = sx - x0;
    auto s = [&](std::size_t y, std::size_t x) { return static_cast<double>(src[y * sw + x]); };
    return (1 - fy) * ((1 - fx) * s(y0, x0) + fx * s(y0, x1)) + fy * ((1 - fx) * s(y1, x0) + fx * s(y1, x1));
}

// Pairwise count with ties half-weighted.
inline double auroc_pairwise(const std::vector<double>& id, const std::vector<double>& ood) {
    double wins = 0.0;
    for (double a : id)
        for (double b : ood) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
    return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

// Largest candidate threshold (drawn from the ID scores) admitting at least
// the target fraction of ID scores. Exhaustive over every candidate.
inline double tau_sweep(const std::vector<double>& id, double target_tpr) {
    double best = -INFINITY;
    for (double t : id) {
        std::size_t pass = 0;
        for (double s : id) pass += s >= t;
        // Integer comparison: pass / n >= target  <=>  pass >= ceil(target * n).
        const auto need = static_cast<std::size_t>(std::ceil(target_tpr * id.size() - 1e-9));
        if (pass >= need) best = std::max(best, t);
    }
    return best;
}

inline double fpr_sweep(const std::vector<double>& id, const std::vector<double>& ood, double target_tpr,
                        double& tau) {
    tau = tau_sweep(id, target_tpr);
    std::size_t admitted = 0;
    for (double s : ood) admitted += s >= tau;
    return static_cast<double>(admitted) / static_cast<double>(ood.size());
}

}  // namespace oracle
