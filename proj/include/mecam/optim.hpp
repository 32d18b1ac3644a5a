#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mecam/tensor.hpp"

namespace mecam {

/// Plain SGD with decoupled-into-gradient weight decay:
/// p <- p - lr * (grad + weight_decay * p), then grads are zeroed.
void sgd_step(std::span<Tensor> params, double lr, double weight_decay);

/// Heavy-ball velocity, one buffer per parameter; sized on first use.
struct SgdState {
    std::vector<std::vector<double>> velocity;
};

/// buf <- momentum * buf + (grad + weight_decay * p); p <- p - lr * buf.
/// With momentum 0 this is exactly the plain step above.
void sgd_step(std::span<Tensor> params, double lr, double weight_decay, double momentum, SgdState& state);

/// Cosine decay from `start` to `end` over `total_steps` steps; step 0 gives
/// `start`, step total_steps-1 gives `end`.
double cosine_lr(double start, double end, std::size_t step, std::size_t total_steps);

}  // namespace mecam
