#include "mecam/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mecam/error.hpp"
#include "mecam/rng.hpp"

namespace mecam {

int ModelConfig::stage_resolution(int stage) const {
    int r = input_size;
    for (int s = 0; s < stage; ++s) r = (r + 1) / 2;
    return r;
}

void ModelConfig::validate() const {
    if (in_channels < 1) throw UsageError("in_channels must be >= 1");
    if (num_classes < 2) throw UsageError("num_classes must be >= 2");
    if (stage_widths.size() < 2) throw UsageError("stage_widths needs at least 2 stages");
    if (std::any_of(stage_widths.begin(), stage_widths.end(), [](int w) { return w < 1; })) {
        throw UsageError("stage_widths must be positive");
    }
    if (blocks_per_stage < 0) throw UsageError("blocks_per_stage must be >= 0");
    if (input_size < 2) throw UsageError("input_size must be >= 2");
    if (exit_stages.empty()) throw UsageError("exit_stages must not be empty");
    for (std::size_t i = 0; i < exit_stages.size(); ++i) {
        if (exit_stages[i] < 1 || exit_stages[i] > num_stages()) {
            throw UsageError("exit stage " + std::to_string(exit_stages[i]) + " outside 1.." +
                             std::to_string(num_stages()));
        }
        if (i > 0 && exit_stages[i] <= exit_stages[i - 1]) {
            throw UsageError("exit_stages must be strictly increasing");
        }
    }
    if (exit_stages.back() != num_stages()) throw UsageError("the final stage must carry an exit");
}

std::size_t ExitOutputs::index_of_stage(int stage) const {
    for (std::size_t i = 0; i < exits.size(); ++i) {
        if (exits[i].stage == stage) return i;
    }
    throw UsageError("no exit at stage " + std::to_string(stage));
}

Model::Model(ModelConfig config, std::vector<Stage> stages) : config_(std::move(config)), stages_(std::move(stages)) {}

namespace {

template <typename Fn>
void visit_state(const std::vector<Stage>& stages, bool params, bool buffers, Fn&& fn) {
    auto conv = [&](const std::string& prefix, const Conv& c) {
        if (!params) return;
        fn(prefix + ".weight", c.weight);
        if (c.bias.defined()) fn(prefix + ".bias", c.bias);
    };
    auto norm = [&](const std::string& prefix, const Norm& n) {
        if (params) {
            fn(prefix + ".gamma", n.gamma);
            fn(prefix + ".beta", n.beta);
        }
        if (buffers) {
            fn(prefix + ".running_mean", n.running_mean);
            fn(prefix + ".running_var", n.running_var);
        }
    };
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const std::string sp = "stage" + std::to_string(s + 1);
        conv(sp + ".down.conv", stages[s].down);
        norm(sp + ".down.norm", stages[s].down_norm);
        for (std::size_t b = 0; b < stages[s].blocks.size(); ++b) {
            const std::string bp = sp + ".block" + std::to_string(b + 1);
            const auto& blk = stages[s].blocks[b];
            conv(bp + ".conv1", blk.conv1);
            norm(bp + ".norm1", blk.norm1);
            conv(bp + ".conv2", blk.conv2);
            norm(bp + ".norm2", blk.norm2);
        }
        if (stages[s].has_exit) conv(sp + ".head", stages[s].head);
    }
}

Conv make_conv(SplitMix64& rng, int out, int in, int k, int stride, int padding, bool with_bias) {
    const std::size_t fan_in = static_cast<std::size_t>(in) * k * k;
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor w(Shape{static_cast<std::size_t>(out), static_cast<std::size_t>(in), static_cast<std::size_t>(k),
                   static_cast<std::size_t>(k)},
             0.0f, true);
    for (auto& v : w.data()) v = static_cast<float>(rng.normal() * stddev);
    Tensor b = with_bias ? Tensor(Shape{static_cast<std::size_t>(out)}, 0.0f, true) : Tensor();
    return Conv{w, b, stride, padding};
}

Norm make_norm(int channels) {
    const Shape s{static_cast<std::size_t>(channels)};
    return Norm{Tensor(s, 1.0f, true), Tensor(s, 0.0f, true), Tensor(s, 0.0f), Tensor(s, 1.0f)};
}

using MomentSink = std::vector<BatchMoments>;

Tensor apply_norm(const Tensor& x, const Norm& n, bool training, MomentSink* sink) {
    if (!training) return batch_stats_norm(x, n.gamma, n.beta, n.running_mean, n.running_var, false);
    BatchMoments m;
    Tensor y = batch_stats_norm(x, n.gamma, n.beta, n.running_mean, n.running_var, true, &m);
    sink->push_back(std::move(m));
    return y;
}

Tensor apply_conv(const Tensor& x, const Conv& c) { return conv2d(x, c.weight, c.bias, c.stride, c.padding); }

void check_input(const ModelConfig& cfg, const Tensor& x) {
    const auto n = static_cast<std::size_t>(cfg.input_size);
    if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(cfg.in_channels) || x.dim(2) != n || x.dim(3) != n) {
        throw ShapeError("model input " + shape_str(x.shape()) + " does not match expected [Nx" +
                         std::to_string(cfg.in_channels) + "x" + std::to_string(n) + "x" + std::to_string(n) + "]");
    }
}

ExitOutputs run(const Model& model, const Tensor& x, bool training, MomentSink* sink) {
    const auto& cfg = model.config();
    check_input(cfg, x);
    ExitOutputs out;
    const auto& stages = model.stages();
    const std::size_t embed_stage = stages.size() - 2;
    Tensor h = x;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const Stage& st = stages[s];
        h = relu(apply_norm(apply_conv(h, st.down), st.down_norm, training, sink));
        for (const auto& blk : st.blocks) {
            Tensor r = relu(apply_norm(apply_conv(h, blk.conv1), blk.norm1, training, sink));
            r = apply_norm(apply_conv(r, blk.conv2), blk.norm2, training, sink);
            h = relu(add(h, r));
        }
        if (s == embed_stage) out.embedding = global_avg_pool(h);
        if (st.has_exit) {
            Tensor maps = apply_conv(h, st.head);
            Tensor logits = global_avg_pool(maps);
            out.exits.push_back(ExitOutput{static_cast<int>(s + 1), std::move(maps), std::move(logits)});
        }
    }
    return out;
}

void update_running(Norm& n, const BatchMoments& m) {
    auto rm = n.running_mean.data();
    auto rv = n.running_var.data();
    for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = kNormMomentum * rm[c] + (1.0f - kNormMomentum) * m.mean[c];
        rv[c] = kNormMomentum * rv[c] + (1.0f - kNormMomentum) * m.var[c];
    }
}

}  // namespace

std::vector<NamedTensor> Model::named_parameters() const {
    std::vector<NamedTensor> out;
    visit_state(stages_, true, false, [&](std::string name, const Tensor& t) { out.push_back({std::move(name), t}); });
    return out;
}

std::vector<NamedTensor> Model::named_buffers() const {
    std::vector<NamedTensor> out;
    visit_state(stages_, false, true, [&](std::string name, const Tensor& t) { out.push_back({std::move(name), t}); });
    return out;
}

std::vector<NamedTensor> Model::state() const {
    auto out = named_parameters();
    auto buffers = named_buffers();
    out.insert(out.end(), buffers.begin(), buffers.end());
    return out;
}

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out;
    for (auto& nt : named_parameters()) out.push_back(nt.tensor);
    return out;
}

Model Model::clone() const {
    auto copy_conv = [](const Conv& c) {
        Conv r = c;
        r.weight = c.weight.clone();
        r.weight.set_requires_grad(true);
        if (c.bias.defined()) {
            r.bias = c.bias.clone();
            r.bias.set_requires_grad(true);
        }
        return r;
    };
    auto copy_norm = [](const Norm& n) {
        Norm r{n.gamma.clone(), n.beta.clone(), n.running_mean.clone(), n.running_var.clone()};
        r.gamma.set_requires_grad(true);
        r.beta.set_requires_grad(true);
        return r;
    };
    std::vector<Stage> stages;
    for (const auto& st : stages_) {
        Stage s;
        s.down = copy_conv(st.down);
        s.down_norm = copy_norm(st.down_norm);
        for (const auto& b : st.blocks) {
            s.blocks.push_back(ResidualBlock{copy_conv(b.conv1), copy_norm(b.norm1), copy_conv(b.conv2), copy_norm(b.norm2)});
        }
        s.has_exit = st.has_exit;
        if (st.has_exit) s.head = copy_conv(st.head);
        stages.push_back(std::move(s));
    }
    return Model(config_, std::move(stages));
}

Model build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    SplitMix64 rng(seed);
    std::vector<Stage> stages;
    int in = config.in_channels;
    for (int s = 0; s < config.num_stages(); ++s) {
        const int w = config.stage_widths[s];
        Stage st;
        st.down = make_conv(rng, w, in, 3, 2, 1, false);
        st.down_norm = make_norm(w);
        for (int b = 0; b < config.blocks_per_stage; ++b) {
            st.blocks.push_back(ResidualBlock{make_conv(rng, w, w, 3, 1, 1, false), make_norm(w),
                                              make_conv(rng, w, w, 3, 1, 1, false), make_norm(w)});
        }
        st.has_exit = std::find(config.exit_stages.begin(), config.exit_stages.end(), s + 1) != config.exit_stages.end();
        if (st.has_exit) st.head = make_conv(rng, config.num_classes, w, 1, 1, 0, true);
        stages.push_back(std::move(st));
        in = w;
    }
    return Model(config, std::move(stages));
}

ExitOutputs forward(const Model& model, const Tensor& x) { return run(model, x, false, nullptr); }

ExitOutputs forward_train(Model& model, const Tensor& x) {
    MomentSink sink;
    ExitOutputs out = run(model, x, true, &sink);
    // Same traversal order as run(): down norm, then block norms.
    std::size_t i = 0;
    for (auto& st : model.stages()) {
        update_running(st.down_norm, sink.at(i++));
        for (auto& blk : st.blocks) {
            update_running(blk.norm1, sink.at(i++));
            update_running(blk.norm2, sink.at(i++));
        }
    }
    return out;
}

int argmax_lowest(std::span<const float> values) {
    if (values.empty()) throw ShapeError("argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return static_cast<int>(best);
}

int predicted_class(const ExitOutputs& outputs, std::size_t sample) {
    if (outputs.exits.empty()) throw ShapeError("predicted_class: no exits");
    const Tensor& logits = outputs.final_exit().logits;
    const std::size_t c = logits.dim(1);
    return argmax_lowest(logits.data().subspan(sample * c, c));
}

Tensor multi_exit_loss(const ExitOutputs& outputs, std::span<const int> labels,
                       std::span<const double> exit_loss_weights) {
    const std::size_t n_exits = outputs.exits.size();
    std::vector<double> w(exit_loss_weights.begin(), exit_loss_weights.end());
    if (w.empty()) w.assign(n_exits, 1.0);
    if (w.size() != n_exits) {
        throw UsageError("exit_loss_weights has " + std::to_string(w.size()) + " entries for " +
                         std::to_string(n_exits) + " exits");
    }
    if (std::any_of(w.begin(), w.end(), [](double v) { return v < 0.0 || !std::isfinite(v); })) {
        throw UsageError("exit_loss_weights must be finite and non-negative");
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) throw UsageError("exit_loss_weights must not all be zero");

    Tensor loss;
    for (std::size_t e = 0; e < n_exits; ++e) {
        if (w[e] == 0.0) continue;  // no graph edge, so upstream grads stay exactly zero
        Tensor ce = cross_entropy(outputs.exits[e].logits, labels);
        const double we = w[e] / total;
        Tensor term = we == 1.0 ? ce : scale(ce, static_cast<float>(we));
        loss = loss.defined() ? add(loss, term) : term;
    }
    return loss;
}

}  // namespace mecam
