#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mecam/dataset.hpp"
#include "mecam/model.hpp"

namespace mecam {

struct TrainOptions {
    int epochs = 30;
    int batch_size = 32;
    double lr_start = 0.01;
    double lr_end = 1e-4;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    std::vector<double> exit_loss_weights;  // empty = uniform
    std::uint64_t seed = 42;
    bool augment = true;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;    // learning rate at the epoch's first step
    double loss = 0.0;  // mean multi-exit loss over the epoch's batches
    double accuracy = 0.0;  // final-exit accuracy of the training-mode passes
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch SGD on the multi-exit loss with a per-step cosine learning rate.
/// Deterministic in (model, dataset, options). Throws NumericError on NaN/Inf.
std::vector<EpochStats> train(Model& model, const Dataset& dataset, const TrainOptions& options,
                              const EpochCallback& on_epoch = {});

/// Stacks 1 x C x H x W samples into an N x C x H x W batch.
Tensor stack_batch(std::span<const ImageSample> samples);

/// Final-exit accuracy in inference mode.
double evaluate_accuracy(const Model& model, const Dataset& dataset);

}  // namespace mecam
