#include "mecam/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mecam/error.hpp"
#include "mecam/optim.hpp"
#include "mecam/rng.hpp"

namespace mecam {

Tensor stack_batch(std::span<const ImageSample> samples) {
    if (samples.empty()) throw ShapeError("stack_batch: empty batch");
    Shape s = samples.front().pixels.shape();
    const std::size_t per = samples.front().pixels.numel();
    s[0] = samples.size();
    Tensor out(s);
    auto dst = out.data();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].pixels.numel() != per) throw ShapeError("stack_batch: samples differ in shape");
        const auto src = samples[i].pixels.data();
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
}

std::vector<EpochStats> train(Model& model, const Dataset& dataset, const TrainOptions& options,
                              const EpochCallback& on_epoch) {
    if (dataset.empty()) throw UsageError("train: empty dataset");
    if (options.epochs < 0 || options.batch_size < 1) throw UsageError("train: bad epochs or batch_size");
    const int classes = model.config().num_classes;
    for (const auto& s : dataset) {
        if (!s.label || *s.label < 0 || *s.label >= classes) {
            throw DataError(DataErrorKind::label_out_of_range, "train: sample " + s.id + " has no valid label");
        }
    }

    const std::size_t n = dataset.size();
    const std::size_t batch = static_cast<std::size_t>(options.batch_size);
    const std::size_t steps_per_epoch = (n + batch - 1) / batch;
    const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(options.epochs);
    auto params = model.parameters();
    for (auto& p : params) p.zero_grad();

    SgdState optimizer;
    SplitMix64 rng(options.seed);
    std::vector<std::size_t> order(n);
    std::vector<EpochStats> log;
    std::size_t step = 0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.lr = cosine_lr(options.lr_start, options.lr_end, step, total_steps);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            const std::size_t lo = b * batch, hi = std::min(n, lo + batch);
            std::vector<ImageSample> items;
            std::vector<int> labels;
            for (std::size_t i = lo; i < hi; ++i) {
                const auto& s = dataset[order[i]];
                items.push_back(options.augment ? augment(s, rng) : s);
                labels.push_back(*s.label);
            }
            const Tensor x = stack_batch(items);

            Tape tape;
            Tape::Scope scope(tape);
            const ExitOutputs out = forward_train(model, x);
            const Tensor loss = multi_exit_loss(out, labels, options.exit_loss_weights);
            if (!std::isfinite(loss.item())) throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1));
            tape.backward(loss);
            const double lr = cosine_lr(options.lr_start, options.lr_end, step, total_steps);
            sgd_step(params, lr, options.weight_decay, options.momentum, optimizer);
            for (const auto& p : params) p.check_finite("sgd_step");
            ++step;

            loss_sum += loss.item();
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (predicted_class(out, i) == labels[i]) ++correct;
            }
        }
        stats.loss = loss_sum / static_cast<double>(steps_per_epoch);
        stats.accuracy = static_cast<double>(correct) / static_cast<double>(n);
        log.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    for (auto& p : params) p.drop_grad();
    return log;
}

double evaluate_accuracy(const Model& model, const Dataset& dataset) {
    if (dataset.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& s : dataset) {
        const ExitOutputs out = forward(model, s.pixels);
        if (s.label && predicted_class(out) == *s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace mecam
