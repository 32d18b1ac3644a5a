#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mecam/rng.hpp"
#include "mecam/tensor.hpp"

namespace mecam {

enum class Split { train, calib, test };

const char* to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestRow {
    std::string path;          // relative to the dataset root
    std::optional<int> label;  // empty for OOD rows ("-")
    Split split = Split::train;

    bool operator==(const ManifestRow&) const = default;
};

/// CSV with the exact header `path,label,split`.
std::vector<ManifestRow> parse_manifest(const std::string& text);
std::string format_manifest(const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

struct ImageSample {
    std::string id;             // manifest path
    Tensor pixels;              // 1 x C x H x W in [0, 1]
    std::optional<int> label;
};

using Dataset = std::vector<ImageSample>;

struct LoadOptions {
    int input_size = 32;
    int channels = 1;
    int num_classes = 2;
    std::optional<Split> split;  // keep only this split when set
    bool require_labels = false;
};

/// Decodes every manifest row under `root`, resizing to input_size x input_size.
/// `manifest` may be relative to `root`.
Dataset load_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest,
                     const LoadOptions& options);

/// Bilinear resize of a 1 x C x H x W image tensor.
Tensor resize_image(const Tensor& image, std::size_t height, std::size_t width);

struct AugmentDraw {
    bool flip = false;
    float brightness = 1.0f;
};

/// Flip with probability 0.5, brightness factor uniform in [0.9, 1.1].
AugmentDraw draw_augment(SplitMix64& rng);
/// Optional horizontal flip, then brightness scale clamped to [0, 1].
ImageSample apply_augment(const ImageSample& sample, const AugmentDraw& draw);
ImageSample augment(const ImageSample& sample, SplitMix64& rng);

Tensor flip_horizontal(const Tensor& image);
Tensor scale_brightness(const Tensor& image, float factor);

/// Mask path for an image path by the `images/` -> `masks/` directory convention.
std::string mask_path_for(const std::string& image_path);

}  // namespace mecam
