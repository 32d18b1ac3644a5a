#include "mecam/resample.hpp"

#include <algorithm>
#include <cmath>

#include "mecam/error.hpp"

namespace mecam {

namespace {

struct Tap {
    std::size_t lo, hi;
    double frac;
};

std::vector<Tap> taps(std::size_t src, std::size_t dst) {
    std::vector<Tap> out(dst);
    const double ratio = static_cast<double>(src) / static_cast<double>(dst);
    for (std::size_t i = 0; i < dst; ++i) {
        double pos = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        pos = std::max(pos, 0.0);
        auto lo = static_cast<std::size_t>(std::floor(pos));
        lo = std::min(lo, src - 1);
        const std::size_t hi = std::min(lo + 1, src - 1);
        out[i] = Tap{lo, hi, hi == lo ? 0.0 : pos - static_cast<double>(lo)};
    }
    return out;
}

}  // namespace

std::vector<float> resample_bilinear(std::span<const float> src, std::size_t src_h, std::size_t src_w,
                                     std::size_t dst_h, std::size_t dst_w) {
    if (src_h == 0 || src_w == 0 || dst_h == 0 || dst_w == 0 || src.size() != src_h * src_w) {
        throw ShapeError("resample_bilinear: bad extents");
    }
    const auto ty = taps(src_h, dst_h);
    const auto tx = taps(src_w, dst_w);
    std::vector<float> out(dst_h * dst_w);
    for (std::size_t y = 0; y < dst_h; ++y) {
        const auto& a = ty[y];
        for (std::size_t x = 0; x < dst_w; ++x) {
            const auto& b = tx[x];
            const double top = (1.0 - b.frac) * src[a.lo * src_w + b.lo] + b.frac * src[a.lo * src_w + b.hi];
            const double bottom = (1.0 - b.frac) * src[a.hi * src_w + b.lo] + b.frac * src[a.hi * src_w + b.hi];
            out[y * dst_w + x] = static_cast<float>((1.0 - a.frac) * top + a.frac * bottom);
        }
    }
    return out;
}

}  // namespace mecam
