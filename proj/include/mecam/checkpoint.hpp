#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mecam/model.hpp"

namespace mecam {

// Layout (all integers little-endian u32 unless noted):
//   "MECM" | version | payload | crc32(payload)
//   payload = config | tensor_count | tensors...
//   config  = in_channels num_classes input_size blocks_per_stage
//             n_widths widths... n_exits exit_stages...
//   tensor  = name_len name(utf-8) dtype(u8, 0 = f32) rank dims... data(f32 LE)
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace mecam
