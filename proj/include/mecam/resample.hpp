#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mecam {

/// Bilinear resampling of one row-major plane with align_corners = false
/// (half-pixel centers, edge clamping). Works in both directions.
std::vector<float> resample_bilinear(std::span<const float> src, std::size_t src_h, std::size_t src_w,
                                     std::size_t dst_h, std::size_t dst_w);

}  // namespace mecam
