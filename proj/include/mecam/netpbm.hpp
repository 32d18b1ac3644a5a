#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mecam/tensor.hpp"

namespace mecam {

/// 8-bit image, row-major, channels interleaved (1 = gray, 3 = RGB).
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<std::uint8_t> pixels;

    bool operator==(const Image&) const = default;
};

/// Binary P5 / P6 with maxval 255. Header comments (`#` to end of line) are skipped.
Image decode_pnm(std::span<const std::uint8_t> bytes);
Image decode_pgm(std::span<const std::uint8_t> bytes);
Image decode_ppm(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_pgm(const Image& image);
std::vector<std::uint8_t> encode_ppm(const Image& image);
/// P5 for one channel, P6 for three.
std::vector<std::uint8_t> encode_pnm(const Image& image);

Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& image);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

/// Planar 1 x C x H x W tensor scaled to [0, 1].
Tensor image_to_tensor(const Image& image);
/// Inverse of image_to_tensor: clamps to [0, 1] and rounds 255 * v.
Image tensor_to_image(const Tensor& tensor);

/// Single-channel image from values in [0, 1]: round(255 * v).
Image heat_to_image(std::span<const float> values, std::size_t height, std::size_t width);

}  // namespace mecam
