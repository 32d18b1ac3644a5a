#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "mecam/error.hpp"
#include "mecam/metrics.hpp"
#include "mecam/rng.hpp"
#include "oracles.hpp"

using namespace mecam;

namespace {

std::vector<double> draw(SplitMix64& rng, std::size_t n, int levels) {
    std::vector<double> v(n);
    for (auto& x : v) x = static_cast<double>(rng.below(levels)) / 4.0;
    return v;
}

ImageSample sample(const std::string& id, std::optional<int> label = std::nullopt) {
    return ImageSample{id, Tensor(Shape{1, 1, 2, 2}), label};
}

}  // namespace

TEST_CASE("auroc") {
    CHECK(auroc(std::vector<double>{3, 4}, std::vector<double>{1, 2}) == 1.0);
    CHECK(auroc(std::vector<double>{2, 2, 2}, std::vector<double>{2, 2}) == 0.5);
    CHECK(auroc(std::vector<double>{1, 3, 5}, std::vector<double>{2, 4}) == 0.5);
    CHECK_THROWS_AS(auroc(std::vector<double>{}, std::vector<double>{1}), UsageError);
    CHECK_THROWS_AS(auroc(std::vector<double>{1}, std::vector<double>{}), UsageError);

    SplitMix64 rng(1);
    for (int t = 0; t < 200; ++t) {
        const auto id = draw(rng, 1 + rng.below(50), 1 + static_cast<int>(rng.below(30)));
        const auto ood = draw(rng, 1 + rng.below(50), 1 + static_cast<int>(rng.below(30)));
        CHECK(auroc(id, ood) == oracle::auroc_pairwise(id, ood));
        // Strictly increasing transform.
        std::vector<double> eid, eood;
        for (double x : id) eid.push_back(std::exp(3 * x) - 7);
        for (double x : ood) eood.push_back(std::exp(3 * x) - 7);
        CHECK(auroc(eid, eood) == doctest::Approx(auroc(id, ood)).epsilon(1e-12));
    }
}

TEST_CASE("auroc is antisymmetric without ties") {
    SplitMix64 rng(2);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> a(1 + rng.below(30)), b(1 + rng.below(30));
        for (auto& x : a) x = rng.normal();
        for (auto& x : b) x = rng.normal() + 0.5;
        CHECK(auroc(a, b) + auroc(b, a) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("fpr_at_tpr") {
    const std::vector<double> id{6, 7, 8, 9, 10};
    const auto r = fpr_at_tpr(id, std::vector<double>{5, 6.5, 1}, 0.95);
    CHECK(r.tau == 6.0);
    CHECK(r.fpr == doctest::Approx(1.0 / 3.0));
    CHECK(fpr_at_tpr(id, std::vector<double>{1, 2, 5.9}).fpr == 0.0);
    CHECK(fpr_at_tpr(id, std::vector<double>{11, 20}).fpr == 1.0);
    CHECK_THROWS_AS(fpr_at_tpr(id, std::vector<double>{}), UsageError);

    SplitMix64 rng(3);
    for (int t = 0; t < 200; ++t) {
        const auto a = draw(rng, 1 + rng.below(50), 20);
        const auto b = draw(rng, 1 + rng.below(50), 20);
        double tau = 0.0;
        const double fpr = oracle::fpr_sweep(a, b, 0.95, tau);
        const auto got = fpr_at_tpr(a, b, 0.95);
        CHECK(got.tau == tau);
        CHECK(got.fpr == fpr);
        // Monotone in the target.
        double prev = -1.0;
        for (double tpr : {0.5, 0.8, 0.9, 0.95, 1.0}) {
            const double f = fpr_at_tpr(a, b, tpr).fpr;
            CHECK(f >= prev);
            prev = f;
        }
    }
}

TEST_CASE("roc_curve") {
    SplitMix64 rng(4);
    for (int t = 0; t < 100; ++t) {
        const auto id = draw(rng, 1 + rng.below(40), 15);
        const auto ood = draw(rng, 1 + rng.below(40), 15);
        const auto roc = roc_curve(id, ood);
        REQUIRE(roc.size() >= 2);
        CHECK(roc.front() == RocPoint{0, 0});
        CHECK(roc.back() == RocPoint{1, 1});
        for (std::size_t i = 1; i < roc.size(); ++i) {
            CHECK(roc[i].fpr >= roc[i - 1].fpr);
            CHECK(roc[i].tpr >= roc[i - 1].tpr);
        }
        CHECK(std::abs(trapezoid_area(roc) - auroc(id, ood)) <= 1e-9);
    }
}

TEST_CASE("mixed_testset") {
    Dataset id, ood;
    for (int i = 0; i < 100; ++i) id.push_back(sample("id/" + std::to_string(i), i % 2));
    for (int i = 0; i < 50; ++i) ood.push_back(sample("ood/" + std::to_string(i), 1));
    const auto mixed = mixed_testset(id, ood);
    CHECK(mixed.size() == 150);
    CHECK(std::count_if(mixed.begin(), mixed.end(), [](const MixedSample& m) { return m.truth == Verdict::id; }) == 100);
    for (const auto& m : mixed) {
        if (m.truth == Verdict::ood) CHECK_FALSE(m.sample.label.has_value());
    }
    CHECK_THROWS_AS(mixed_testset(id, Dataset{}), UsageError);
    Dataset clash{sample("id/3")};
    CHECK_THROWS_AS(mixed_testset(id, clash), DataError);
}

TEST_CASE("metrics are permutation invariant") {
    SplitMix64 rng(5);
    auto id = draw(rng, 40, 10), ood = draw(rng, 30, 10);
    const auto a = evaluate_scores("x", id, ood);
    for (std::size_t i = id.size(); i > 1; --i) std::swap(id[i - 1], id[rng.below(i)]);
    for (std::size_t i = ood.size(); i > 1; --i) std::swap(ood[i - 1], ood[rng.below(i)]);
    const auto b = evaluate_scores("x", id, ood);
    CHECK(a.auroc == b.auroc);
    CHECK(a.fpr95 == b.fpr95);
    CHECK(a.tau == b.tau);
    CHECK(a.roc == b.roc);
}

TEST_CASE("emit_report round trip") {
    SplitMix64 rng(6);
    std::vector<EvalReport> reports;
    for (const char* name : {"mecam", "msp", "mecam@1+2"}) {
        std::vector<double> id(23), ood(17);
        for (auto& x : id) x = rng.normal() + 1;
        for (auto& x : ood) x = rng.normal();
        reports.push_back(evaluate_scores(name, id, ood));
    }
    const auto dir = std::filesystem::temp_directory_path() / "mecam_unit_report";
    std::filesystem::remove_all(dir);
    emit_report(reports, dir);
    const auto back = read_report(dir / "report.csv");
    REQUIRE(back.size() == reports.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].scorer == reports[i].scorer);
        CHECK(back[i].auroc == reports[i].auroc);
        CHECK(back[i].fpr95 == reports[i].fpr95);
        CHECK(back[i].tau == reports[i].tau);
        CHECK(back[i].n_id == reports[i].n_id);
        CHECK(back[i].n_ood == reports[i].n_ood);
        const auto roc = read_roc(dir / ("roc_" + reports[i].scorer + ".csv"));
        CHECK(roc == reports[i].roc);
        CHECK(std::abs(trapezoid_area(roc) - reports[i].auroc) <= 1e-6);
    }
    const std::string table = format_report_table(reports);
    char expect[32];
    std::snprintf(expect, sizeof expect, "%.4f", reports[0].auroc);
    CHECK(table.find(expect) != std::string::npos);
    std::filesystem::remove_all(dir);
}
