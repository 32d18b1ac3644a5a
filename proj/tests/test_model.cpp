#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "mecam/checkpoint.hpp"
#include "mecam/error.hpp"
#include "mecam/model.hpp"
#include "mecam/rng.hpp"
#include "mecam/train.hpp"
#include "oracles.hpp"

using namespace mecam;

namespace {

Tensor random_image(const ModelConfig& c, SplitMix64& rng, std::size_t n = 1) {
    const auto s = static_cast<std::size_t>(c.input_size);
    std::vector<float> v(n * c.in_channels * s * s);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    return Tensor(Shape{n, static_cast<std::size_t>(c.in_channels), s, s}, std::move(v));
}

ModelConfig small_config() {
    ModelConfig c;
    c.stage_widths = {4, 8, 16, 16};
    c.input_size = 8;
    return c;
}

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("ModelConfig validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.exit_stages = {1, 3};
    CHECK_THROWS_AS(c.validate(), UsageError);  // final stage must carry an exit
    c.exit_stages = {2, 2, 4};
    CHECK_THROWS_AS(c.validate(), UsageError);
    c.exit_stages = {};
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = ModelConfig{};
    c.stage_widths = {8};
    c.exit_stages = {1};
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = ModelConfig{};
    c.num_classes = 1;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("build is deterministic in the seed") {
    const ModelConfig c;
    const Model a = build(c, 9), b = build(c, 9), d = build(c, 10);
    const auto sa = a.state(), sb = b.state(), sd = d.state();
    REQUIRE(sa.size() == sb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].name == sb[i].name);
        CHECK(values(sa[i].tensor) == values(sb[i].tensor));
        any_diff |= values(sa[i].tensor) != values(sd[i].tensor);
    }
    CHECK(any_diff);
}

TEST_CASE("exit map sizes halve per stage") {
    const ModelConfig c;
    CHECK(c.stage_resolution(1) == 16);
    const Model m = build(c, 1);
    SplitMix64 rng(1);
    const ExitOutputs out = forward(m, random_image(c, rng));
    REQUIRE(out.exits.size() == 4);
    const std::size_t expect[] = {16, 8, 4, 2};
    for (std::size_t e = 0; e < 4; ++e) {
        CHECK(out.exits[e].stage == static_cast<int>(e + 1));
        CHECK(out.exits[e].activation_map.shape() == Shape{1, 2, expect[e], expect[e]});
        CHECK(out.exits[e].logits.shape() == Shape{1, 2});
    }
    CHECK(out.embedding.shape() == Shape{1, 32});
    CHECK(c.embedding_dim() == 32);
}

TEST_CASE("8x8 input with four stages is accepted") {
    const ModelConfig c = small_config();
    CHECK_NOTHROW(c.validate());
    CHECK(c.stage_resolution(3) == 1);
    CHECK(c.stage_resolution(4) == 1);
}

TEST_CASE("exit_stages projection") {
    ModelConfig c;
    c.exit_stages = {4};
    const Model m = build(c, 1);
    SplitMix64 rng(2);
    const ExitOutputs out = forward(m, random_image(c, rng));
    CHECK(out.exits.size() == 1);
    CHECK(out.index_of_stage(4) == 0);
    CHECK_THROWS_AS(out.index_of_stage(2), UsageError);
}

TEST_CASE("forward") {
    const ModelConfig c;
    Model m = build(c, 3);
    SplitMix64 rng(3);
    const Tensor x = random_image(c, rng);

    SUBCASE("pure") {
        const ExitOutputs a = forward(m, x), b = forward(m, x);
        for (std::size_t e = 0; e < a.exits.size(); ++e) {
            CHECK(values(a.exits[e].activation_map) == values(b.exits[e].activation_map));
            CHECK(values(a.exits[e].logits) == values(b.exits[e].logits));
        }
        CHECK(values(a.embedding) == values(b.embedding));
    }
    SUBCASE("logits are the spatial means of the activation maps") {
        const ExitOutputs out = forward(m, x);
        for (const auto& e : out.exits) {
            const auto& s = e.activation_map.shape();
            const auto ref = oracle::global_avg_pool(values(e.activation_map), s[1], s[2] * s[3]);
            for (std::size_t k = 0; k < ref.size(); ++k) CHECK(std::abs(e.logits.at(k) - ref[k]) <= 1e-5);
        }
    }
    SUBCASE("zero final head yields the bias") {
        Conv& head = m.stages().back().head;
        for (auto& w : head.weight.data()) w = 0.0f;
        head.bias.data()[0] = 0.25f;
        head.bias.data()[1] = -1.5f;
        const ExitOutputs out = forward(m, x);
        CHECK(values(out.final_exit().logits) == std::vector<float>{0.25f, -1.5f});
    }
    SUBCASE("wrong input shape") {
        CHECK_THROWS_AS(forward(m, Tensor(Shape{1, 1, 16, 16})), ShapeError);
        CHECK_THROWS_AS(forward(m, Tensor(Shape{1, 3, 32, 32})), ShapeError);
    }
}

TEST_CASE("predicted_class") {
    ExitOutputs out;
    out.exits.push_back({4, Tensor(Shape{1, 2, 1, 1}), Tensor(Shape{1, 2}, {0.1f, 0.9f})});
    CHECK(predicted_class(out) == 1);
    out.exits[0].logits = Tensor(Shape{1, 2}, {0.5f, 0.5f});
    CHECK(predicted_class(out) == 0);
    SplitMix64 rng(4);
    for (int t = 0; t < 20; ++t) {
        std::vector<float> l{static_cast<float>(rng.normal()), static_cast<float>(rng.normal()),
                             static_cast<float>(rng.normal())};
        const int p = argmax_lowest(l);
        const float shift = static_cast<float>(rng.uniform(-5, 5));
        for (auto& v : l) v += shift;
        CHECK(argmax_lowest(l) == p);
    }
}

TEST_CASE("multi_exit_loss") {
    const std::vector<int> label{1};
    auto exit_with = [](int stage, std::vector<float> logits) {
        return ExitOutput{stage, Tensor(Shape{1, 3, 1, 1}), Tensor(Shape{1, 3}, std::move(logits))};
    };
    SUBCASE("single exit is plain cross-entropy") {
        ExitOutputs out;
        out.exits.push_back(exit_with(4, {0.3f, -0.2f, 1.0f}));
        const double w[] = {1.0};
        const double ce = -std::log(std::exp(-0.2) / (std::exp(0.3) + std::exp(-0.2) + std::exp(1.0)));
        CHECK(multi_exit_loss(out, label, w).item() == doctest::Approx(ce).epsilon(1e-6));
    }
    SUBCASE("uniform logits give ln C") {
        ExitOutputs out;
        for (int s = 1; s <= 4; ++s) out.exits.push_back(exit_with(s, {0, 0, 0}));
        CHECK(multi_exit_loss(out, label, {}).item() == doctest::Approx(std::log(3.0)).epsilon(1e-6));
    }
    SUBCASE("one-hot weights select one exit; weights are normalized") {
        ExitOutputs out;
        out.exits.push_back(exit_with(1, {2.0f, 0.0f, 0.0f}));
        for (int s = 2; s <= 4; ++s) out.exits.push_back(exit_with(s, {0, 5, 0}));
        const double one_hot[] = {1, 0, 0, 0};
        const double scaled[] = {7, 0, 0, 0};
        const double ce1 = -std::log(1.0 / (std::exp(2.0) + 2.0));
        CHECK(multi_exit_loss(out, label, one_hot).item() == doctest::Approx(ce1).epsilon(1e-6));
        CHECK(multi_exit_loss(out, label, scaled).item() == multi_exit_loss(out, label, one_hot).item());
        const double zeros[] = {0, 0, 0, 0};
        CHECK_THROWS_AS(multi_exit_loss(out, label, zeros), UsageError);
        const double short_list[] = {1, 1};
        CHECK_THROWS_AS(multi_exit_loss(out, label, short_list), UsageError);
    }
}

TEST_CASE("one-hot exit loss leaves later parameters without gradient") {
    const ModelConfig c = small_config();
    Model m = build(c, 5);
    for (auto& p : m.parameters()) p.set_requires_grad(true);
    SplitMix64 rng(5);
    const Tensor x = random_image(c, rng, 3);
    const std::vector<int> labels{0, 1, 1};
    const double w[] = {0, 1, 0, 0};  // exit at stage 2
    Tape tape;
    {
        Tape::Scope scope(tape);
        tape.backward(multi_exit_loss(forward_train(m, x), labels, w));
    }
    for (const auto& np : m.named_parameters()) {
        double total = 0.0;
        for (float g : np.tensor.grad()) total += std::abs(g);
        const bool after_tap = np.name.rfind("stage3", 0) == 0 || np.name.rfind("stage4", 0) == 0 ||
                               np.name.rfind("stage1.head", 0) == 0;
        INFO(np.name);
        if (after_tap) CHECK(total == 0.0);
        if (np.name.rfind("stage2.head.weight", 0) == 0) CHECK(total > 0.0);
    }
}

TEST_CASE("training: lr=0 keeps weights, single sample overfits") {
    ModelConfig c = small_config();
    c.input_size = 16;
    SplitMix64 rng(6);
    Dataset data;
    data.push_back({"only", random_image(c, rng), 1});

    TrainOptions o;
    o.epochs = 3;
    o.batch_size = 1;
    o.lr_start = o.lr_end = 0.0;
    o.weight_decay = 0.0;
    Model frozen = build(c, 6);
    const Model before = frozen.clone();
    train(frozen, data, o);
    for (std::size_t i = 0; i < frozen.named_parameters().size(); ++i) {
        CHECK(values(frozen.named_parameters()[i].tensor) == values(before.named_parameters()[i].tensor));
    }

    TrainOptions fit;
    fit.epochs = 200;
    fit.batch_size = 1;
    fit.lr_start = 0.01;
    fit.lr_end = 0.01;
    fit.augment = false;
    Model m = build(c, 6);
    const auto log = train(m, data, fit);
    CHECK(log.size() == 200);
    CHECK(log.back().loss < log.front().loss);
    CHECK(evaluate_accuracy(m, data) == 1.0);
}

TEST_CASE("training is bit-deterministic") {
    ModelConfig c = small_config();
    c.input_size = 16;
    SplitMix64 rng(7);
    Dataset data;
    for (int i = 0; i < 12; ++i) data.push_back({std::to_string(i), random_image(c, rng), i % 2});
    TrainOptions o;
    o.epochs = 2;
    o.batch_size = 4;
    Model a = build(c, 1), b = build(c, 1);
    train(a, data, o);
    train(b, data, o);
    CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
    CHECK_THROWS_AS(train(a, Dataset{}, o), UsageError);
}

TEST_CASE("checkpoint") {
    const ModelConfig c;
    const Model m = build(c, 11);
    const auto bytes = serialize_checkpoint(m);
    REQUIRE(bytes.size() > 12);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MECM");

    SUBCASE("round trip is bit exact") {
        const Model r = deserialize_checkpoint(bytes);
        CHECK(r.config() == m.config());
        CHECK(serialize_checkpoint(r) == bytes);
        SplitMix64 rng(11);
        const Tensor x = random_image(c, rng);
        const ExitOutputs a = forward(m, x), b = forward(r, x);
        CHECK(values(a.embedding) == values(b.embedding));
        CHECK(values(a.final_exit().logits) == values(b.final_exit().logits));
    }
    SUBCASE("file round trip") {
        const auto path = std::filesystem::temp_directory_path() / "mecam_unit_ckpt.bin";
        save_checkpoint(m, path);
        CHECK(serialize_checkpoint(load_checkpoint(path)) == bytes);
        std::filesystem::remove(path);
    }
    auto kind_of = [](std::vector<std::uint8_t> b) {
        try {
            deserialize_checkpoint(b);
        } catch (const DataError& e) {
            return e.kind();
        }
        return DataErrorKind::io;
    };
    SUBCASE("flipped payload byte") {
        auto b = bytes;
        b[b.size() / 2] ^= 0x01;
        CHECK(kind_of(b) == DataErrorKind::crc_mismatch);
    }
    SUBCASE("bad magic") {
        auto b = bytes;
        b[0] = 'X';
        CHECK(kind_of(b) == DataErrorKind::bad_magic);
    }
    SUBCASE("future version") {
        auto b = bytes;
        b[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
        CHECK(kind_of(b) == DataErrorKind::unsupported_version);
    }
    SUBCASE("truncated") { CHECK(kind_of({bytes.begin(), bytes.begin() + 8}) == DataErrorKind::truncated); }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.ckpt"), DataError); }
}

TEST_CASE("crc32 of a known string") {
    const std::string s = "123456789";
    CHECK(crc32_of({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}) == 0xCBF43926u);
}
