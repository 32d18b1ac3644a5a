#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mecam/model.hpp"

namespace mecam {

/// Row-major single-channel map.
struct Heatmap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values;

    static Heatmap filled(std::size_t h, std::size_t w, float v) { return Heatmap{h, w, std::vector<float>(h * w, v)}; }
    float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    bool operator==(const Heatmap&) const = default;
};

/// Stage numbers (1-based) of the exits that feed the aggregate. Empty means all.
using ExitMask = std::vector<int>;

/// Sorted, de-duplicated mask restricted to configured exits; empty -> every exit.
/// Throws UsageError for stages that carry no exit.
ExitMask resolve_exit_mask(const ModelConfig& config, const ExitMask& requested);

/// Per-pixel softmax across the C channels of a 1 x C x H x W map, channel `cls`.
Heatmap class_probability_map(const Tensor& activation_map, int cls);

/// Min-max rescale to [0, 1]; a constant map becomes all zeros.
Heatmap rescale_unit(const Heatmap& map);

/// class_probability_map followed by rescale_unit. Requires C >= 2.
Heatmap exit_cam(const Tensor& activation_map, int cls);

/// Softmax (temperature 1) over the selected entries of `class_logits`;
/// unselected entries get weight 0.
std::vector<double> exit_weights(std::span<const double> class_logits, const std::vector<bool>& selected);

/// Weights aligned with `outputs.exits`, using each exit's logit for class `cls`.
std::vector<double> exit_weights(const ExitOutputs& outputs, int cls, const ExitMask& mask);

/// Bilinear, align_corners = false. Refuses to shrink.
Heatmap upsample_bilinear(const Heatmap& map, std::size_t height, std::size_t width);

/// sum_e weights[e] * upsample(cams[e]); weights must sum to 1 (within 1e-6).
Heatmap aggregate(std::span<const Heatmap> cams, std::span<const double> weights, std::size_t height,
                  std::size_t width);

/// x'[c, i, j] = x[c, i, j] * (1 - map[i, j]).
Tensor mask_image(const Tensor& image, const Heatmap& map);

struct CamBundle {
    int predicted_class = 0;
    ExitMask exit_stages;            // selected exits
    std::vector<Heatmap> exit_cams;  // native resolution, one per selected exit
    std::vector<double> weights;     // one per selected exit
    Heatmap aggregated;              // input resolution
};

struct CamResult {
    ExitOutputs outputs;
    CamBundle bundle;
    Tensor masked;
};

/// forward -> predicted class -> per-exit CAM -> exit weights -> aggregate -> mask.
CamResult cam_pipeline(const Model& model, const Tensor& image, const ExitMask& mask);

}  // namespace mecam
