#include "mecam/optim.hpp"

#include <cmath>
#include <numbers>

namespace mecam {

void sgd_step(std::span<Tensor> params, double lr, double weight_decay) {
    for (auto& p : params) {
        auto values = p.data();
        auto grad = p.grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double step = lr * (static_cast<double>(grad[i]) + weight_decay * values[i]);
            values[i] = static_cast<float>(values[i] - step);
        }
        p.zero_grad();
    }
}

void sgd_step(std::span<Tensor> params, double lr, double weight_decay, double momentum, SgdState& state) {
    if (momentum == 0.0) {
        sgd_step(params, lr, weight_decay);
        return;
    }
    if (state.velocity.size() != params.size()) {
        state.velocity.assign(params.size(), {});
        for (std::size_t k = 0; k < params.size(); ++k) state.velocity[k].assign(params[k].numel(), 0.0);
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].data();
        auto grad = params[k].grad();
        auto& buf = state.velocity[k];
        for (std::size_t i = 0; i < values.size(); ++i) {
            buf[i] = momentum * buf[i] + static_cast<double>(grad[i]) + weight_decay * values[i];
            values[i] = static_cast<float>(values[i] - lr * buf[i]);
        }
        params[k].zero_grad();
    }
}

double cosine_lr(double start, double end, std::size_t step, std::size_t total_steps) {
    if (total_steps <= 1) return start;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return end + 0.5 * (start - end) * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace mecam
