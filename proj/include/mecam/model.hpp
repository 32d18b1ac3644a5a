#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mecam/ops.hpp"
#include "mecam/tensor.hpp"

namespace mecam {

/// Architecture of the multi-exit classifier. Stage and exit numbers are 1-based.
struct ModelConfig {
    int in_channels = 1;
    int num_classes = 2;
    std::vector<int> stage_widths{8, 16, 32, 64};
    int blocks_per_stage = 1;
    std::vector<int> exit_stages{1, 2, 3, 4};
    int input_size = 32;

    int num_stages() const { return static_cast<int>(stage_widths.size()); }
    /// Spatial extent of the output of `stage` (each stage halves the resolution).
    int stage_resolution(int stage) const;
    /// Dimension of the penultimate embedding.
    int embedding_dim() const { return stage_widths[stage_widths.size() - 2]; }

    /// Throws UsageError describing the first violated constraint.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Conv {
    Tensor weight;  // O x I x K x K
    Tensor bias;    // O, undefined for convs feeding a norm layer
    int stride = 1;
    int padding = 0;
};

struct Norm {
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
};

struct ResidualBlock {
    Conv conv1;
    Norm norm1;
    Conv conv2;
    Norm norm2;
};

struct Stage {
    Conv down;  // stride-2 3x3 entry
    Norm down_norm;
    std::vector<ResidualBlock> blocks;
    bool has_exit = false;
    Conv head;  // 1x1 -> num_classes, only when has_exit
};

/// One exit's class activation maps (N x C x H_e x W_e) and logits (N x C).
struct ExitOutput {
    int stage = 0;
    Tensor activation_map;
    Tensor logits;
};

struct ExitOutputs {
    std::vector<ExitOutput> exits;  // ordered by stage
    Tensor embedding;               // N x d

    const ExitOutput& final_exit() const { return exits.back(); }
    /// Position of `stage` in `exits`; throws UsageError when that stage has no exit.
    std::size_t index_of_stage(int stage) const;
};

class Model {
public:
    Model(ModelConfig config, std::vector<Stage> stages);

    const ModelConfig& config() const noexcept { return config_; }
    const std::vector<Stage>& stages() const noexcept { return stages_; }
    std::vector<Stage>& stages() noexcept { return stages_; }

    /// Trainable tensors in a fixed order.
    std::vector<NamedTensor> named_parameters() const;
    /// Normalization running statistics.
    std::vector<NamedTensor> named_buffers() const;
    /// Parameters followed by buffers; the checkpoint order.
    std::vector<NamedTensor> state() const;
    std::vector<Tensor> parameters() const;

    /// Deep copy (independent storage).
    Model clone() const;

private:
    ModelConfig config_;
    std::vector<Stage> stages_;
};

/// He-normal conv weights, zero biases, unit gamma, zero beta; deterministic in `seed`.
Model build(const ModelConfig& config, std::uint64_t seed);

/// Inference pass: running normalization statistics, no mutation, nothing
/// recorded unless a tape is active and weights require grad.
ExitOutputs forward(const Model& model, const Tensor& x);

/// Training pass: batch statistics, and running statistics updated with
/// momentum kNormMomentum after the pass.
ExitOutputs forward_train(Model& model, const Tensor& x);

/// argmax of the final exit's logits for sample `sample`; ties go to the lowest index.
int predicted_class(const ExitOutputs& outputs, std::size_t sample = 0);
int argmax_lowest(std::span<const float> values);

/// Sum over exits of w_e * CE(l_e, labels), weights normalized to sum 1.
/// An empty weight list means uniform.
Tensor multi_exit_loss(const ExitOutputs& outputs, std::span<const int> labels,
                       std::span<const double> exit_loss_weights);

}  // namespace mecam
