#include "mecam/cam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mecam/error.hpp"
#include "mecam/resample.hpp"

namespace mecam {

ExitMask resolve_exit_mask(const ModelConfig& config, const ExitMask& requested) {
    if (requested.empty()) return config.exit_stages;
    ExitMask out = requested;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    for (int stage : out) {
        if (std::find(config.exit_stages.begin(), config.exit_stages.end(), stage) == config.exit_stages.end()) {
            throw UsageError("exit mask names stage " + std::to_string(stage) + ", which has no exit");
        }
    }
    return out;
}

Heatmap class_probability_map(const Tensor& activation_map, int cls) {
    if (activation_map.rank() != 4 || activation_map.dim(0) != 1) {
        throw ShapeError("exit_cam expects a 1xCxHxW map, got " + shape_str(activation_map.shape()));
    }
    const std::size_t c = activation_map.dim(1), h = activation_map.dim(2), w = activation_map.dim(3);
    if (c < 2) throw UsageError("exit_cam needs at least 2 classes, got " + std::to_string(c));
    if (cls < 0 || static_cast<std::size_t>(cls) >= c) {
        throw UsageError("class " + std::to_string(cls) + " out of range for " + std::to_string(c) + " classes");
    }
    const auto m = activation_map.data();
    const std::size_t area = h * w;
    Heatmap out{h, w, std::vector<float>(area)};
    for (std::size_t p = 0; p < area; ++p) {
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, m[k * area + p]);
        double total = 0.0;
        for (std::size_t k = 0; k < c; ++k) total += std::exp(static_cast<double>(m[k * area + p]) - mx);
        out.values[p] = static_cast<float>(std::exp(static_cast<double>(m[cls * area + p]) - mx) / total);
    }
    return out;
}

Heatmap rescale_unit(const Heatmap& map) {
    Heatmap out = map;
    if (map.values.empty()) return out;
    const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) {
        std::fill(out.values.begin(), out.values.end(), 0.0f);
        return out;
    }
    for (auto& v : out.values) v = static_cast<float>(std::clamp((v - lo) / (hi - lo), 0.0, 1.0));
    return out;
}

Heatmap exit_cam(const Tensor& activation_map, int cls) { return rescale_unit(class_probability_map(activation_map, cls)); }

std::vector<double> exit_weights(std::span<const double> class_logits, const std::vector<bool>& selected) {
    if (class_logits.size() != selected.size()) throw ShapeError("exit_weights: mask size mismatch");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < class_logits.size(); ++e) {
        if (selected[e]) mx = std::max(mx, class_logits[e]);
    }
    if (!std::isfinite(mx)) throw UsageError("exit_weights: empty exit mask");
    std::vector<double> w(class_logits.size(), 0.0);
    double total = 0.0;
    for (std::size_t e = 0; e < class_logits.size(); ++e) {
        if (!selected[e]) continue;
        w[e] = std::exp(class_logits[e] - mx);
        total += w[e];
    }
    for (auto& v : w) v /= total;
    return w;
}

std::vector<double> exit_weights(const ExitOutputs& outputs, int cls, const ExitMask& mask) {
    if (mask.empty()) throw UsageError("exit_weights: empty exit mask");
    std::vector<double> logits;
    std::vector<bool> sel;
    for (const auto& ex : outputs.exits) {
        const std::size_t c = ex.logits.dim(1);
        if (cls < 0 || static_cast<std::size_t>(cls) >= c) throw UsageError("exit_weights: class out of range");
        logits.push_back(ex.logits.data()[static_cast<std::size_t>(cls)]);
        sel.push_back(std::find(mask.begin(), mask.end(), ex.stage) != mask.end());
    }
    return exit_weights(logits, sel);
}

Heatmap upsample_bilinear(const Heatmap& map, std::size_t height, std::size_t width) {
    if (height < map.height || width < map.width) {
        throw UsageError("upsample_bilinear: target " + std::to_string(height) + "x" + std::to_string(width) +
                         " is smaller than source " + std::to_string(map.height) + "x" + std::to_string(map.width));
    }
    if (height == map.height && width == map.width) return map;
    return Heatmap{height, width, resample_bilinear(map.values, map.height, map.width, height, width)};
}

Heatmap aggregate(std::span<const Heatmap> cams, std::span<const double> weights, std::size_t height,
                  std::size_t width) {
    if (cams.size() != weights.size() || cams.empty()) throw ShapeError("aggregate: need one weight per map");
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-6) throw UsageError("aggregate: weights sum to " + std::to_string(total));
    std::vector<double> acc(height * width, 0.0);
    for (std::size_t e = 0; e < cams.size(); ++e) {
        if (weights[e] == 0.0) continue;
        const Heatmap up = upsample_bilinear(cams[e], height, width);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weights[e] * up.values[i];
    }
    Heatmap out{height, width, std::vector<float>(acc.size())};
    for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(std::clamp(acc[i], 0.0, 1.0));
    return out;
}

Tensor mask_image(const Tensor& image, const Heatmap& map) {
    if (image.rank() != 4 || image.dim(2) != map.height || image.dim(3) != map.width) {
        throw ShapeError("mask_image: image " + shape_str(image.shape()) + " vs map " + std::to_string(map.height) +
                         "x" + std::to_string(map.width));
    }
    Tensor out(image.shape());
    const auto src = image.data();
    auto dst = out.data();
    const std::size_t area = map.height * map.width;
    const std::size_t planes = image.dim(0) * image.dim(1);
    for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t p = 0; p < area; ++p) dst[pl * area + p] = src[pl * area + p] * (1.0f - map.values[p]);
    }
    return out;
}

CamResult cam_pipeline(const Model& model, const Tensor& image, const ExitMask& mask) {
    const ExitMask selected = resolve_exit_mask(model.config(), mask);
    CamResult r;
    r.outputs = forward(model, image);
    auto& b = r.bundle;
    b.predicted_class = predicted_class(r.outputs);
    b.exit_stages = selected;
    const auto all_weights = exit_weights(r.outputs, b.predicted_class, selected);
    for (std::size_t e = 0; e < r.outputs.exits.size(); ++e) {
        const auto& ex = r.outputs.exits[e];
        if (std::find(selected.begin(), selected.end(), ex.stage) == selected.end()) continue;
        b.exit_cams.push_back(exit_cam(ex.activation_map, b.predicted_class));
        b.weights.push_back(all_weights[e]);
    }
    b.aggregated = aggregate(b.exit_cams, b.weights, image.dim(2), image.dim(3));
    r.masked = mask_image(image, b.aggregated);
    return r;
}

}  // namespace mecam
