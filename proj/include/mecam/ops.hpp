#pragma once

#include <span>

#include "mecam/tensor.hpp"

namespace mecam {

/// Cross-correlation, NCHW input and OIKK weight, zero padding.
/// Output extent is floor((H + 2*padding - K) / stride) + 1. An undefined
/// bias means no bias term.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

/// 2x2 window, stride 2. Spatial extents must be even. Backward routes the
/// gradient to the first maximum in row-major scan order.
Tensor max_pool2d(const Tensor& input);

/// NCHW -> NxC spatial mean.
Tensor global_avg_pool(const Tensor& input);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& input, int axis);

Tensor relu(const Tensor& input);

/// x: N x in, weight: out x in, bias: out.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Batch statistics reported by batch_stats_norm in training mode.
struct BatchMoments {
    std::vector<float> mean;
    std::vector<float> var;
};

inline constexpr float kNormEpsilon = 1e-5f;
inline constexpr float kNormMomentum = 0.9f;

/// Per-channel affine normalization over (N, H, W) for rank 4, or N for rank 2.
/// Training mode normalizes with batch statistics (biased variance) and writes
/// them to `moments` when given; inference mode uses the running statistics.
Tensor batch_stats_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                        const Tensor& running_mean, const Tensor& running_var, bool training,
                        BatchMoments* moments = nullptr);

/// Elementwise, identical shapes only.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

/// Sum of all elements -> scalar.
Tensor sum(const Tensor& a);

/// mean((a - b)^2) -> scalar.
Tensor mse_mean(const Tensor& a, const Tensor& b);

/// mean over batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Numerically stable log(sum(exp(x))).
double logsumexp(std::span<const float> values);

}  // namespace mecam
