#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mecam/cli.hpp"
#include "mecam/error.hpp"
#include "mecam/metrics.hpp"
#include "mecam/netpbm.hpp"
#include "mecam/run_config.hpp"
#include "mecam/scoring.hpp"

using namespace mecam;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "mecam");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST_CASE("config text") {
    RunConfig c;
    apply_config_text(c, "# comment\nseed = 7\n\nexit_mask=1,3  # trailing\nscorers=mecam,mood\n");
    CHECK(c.seed == 7);
    CHECK(c.exit_mask == ExitMask{1, 3});
    CHECK(c.scorers == std::vector<Scorer>{Scorer::mecam, Scorer::mood_energy});
    try {
        apply_config_text(c, "seed=1\nbogus_key=3\n");
        FAIL("unknown key accepted");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
    }
    CHECK_THROWS_AS(apply_config_text(c, "epochs=ten\n"), UsageError);
    CHECK_THROWS_AS(apply_config_text(c, "just words\n"), UsageError);

    RunConfig d;
    d.ood_manifest = {"a.csv", "b.csv"};
    d.mood_exit = 3;
    d.lr_start = 0.1 + 0.2;
    RunConfig e;
    apply_config_text(e, format_config(d));
    CHECK(format_config(e) == format_config(d));
}

TEST_CASE("seed precedence: defaults < file < env < flags") {
    const auto dir = fs::temp_directory_path() / "mecam_unit_prec";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "cfg") << "seed=11\n";
    RunConfig c;
    apply_config_file(c, dir / "cfg");
    CHECK(c.seed == 11);
    ::setenv("MECAM_SEED", "22", 1);
    apply_seed_env(c);
    CHECK(c.seed == 22);
    apply_setting(c, "seed", "33");
    CHECK(c.seed == 33);
    ::unsetenv("MECAM_SEED");
    fs::remove_all(dir);
}

TEST_CASE("cli usage errors") {
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
    CHECK(cli({"synth"}).code == kExitUsage);  // --out is required
    CHECK(cli({"train", "--set", "nope=1"}).code == kExitUsage);
    CHECK(cli({"eval", "--set", "epochs"}).code == kExitUsage);
    CHECK(cli({"score", "--input", "x.pgm"}).code == kExitUsage);  // no checkpoint
    CHECK(cli({"score", "--checkpoint", "/nonexistent.ckpt", "--input", "x.pgm"}).code == kExitData);
}

TEST_CASE("cli pipeline") {
    const auto root = fs::temp_directory_path() / "mecam_unit_cli";
    fs::remove_all(root);
    const std::string data = (root / "data").string(), run = (root / "run").string();
    const std::vector<std::string> small{"--set", "stage_widths=4,8,8,8", "--set", "input_size=16"};
    auto with = [&](std::vector<std::string> a) {
        a.insert(a.end(), small.begin(), small.end());
        return a;
    };

    REQUIRE(cli({"synth", "--out", data, "--n-per-class", "20", "--image-size", "16", "--seed", "3"}).code == kExitOk);
    for (const char* m : {"id_train.csv", "id_calib.csv", "id_test.csv", "ood_noise.csv", "ood_stripes.csv",
                          "ood_rings.csv"})
        CHECK(fs::exists(fs::path(data) / m));
    CHECK(cli({"synth", "--out", data, "--n-per-class", "20"}).code == kExitUsage);

    const Run tr = cli(with({"train", "--data-root", data, "--out", run, "--epochs", "3", "--batch-size", "8"}));
    REQUIRE(tr.code == kExitOk);
    CHECK(tr.out.find("final_train_acc=") != std::string::npos);
    CHECK(lines_of(slurp(fs::path(run) / "loss_log.csv")).size() == 1 + 3);
    CHECK(lines_of(slurp(fs::path(run) / "loss_log.csv"))[0] == "epoch,lr,loss,train_acc");
    const std::string resolved = slurp(fs::path(run) / "config.resolved");
    CHECK(resolved.find("epochs=3\n") != std::string::npos);
    CHECK(resolved.find("batch_size=8\n") != std::string::npos);
    const std::string ckpt = (fs::path(run) / "model.ckpt").string();

    SUBCASE("calibrate") {
        const std::string out = (root / "calib").string();
        REQUIRE(cli({"calibrate", "--checkpoint", ckpt, "--data-root", data, "--out", out, "--workers", "3"}).code ==
                kExitOk);
        const auto recs = read_score_dump(fs::path(out) / "calib_scores.csv");
        const auto ts = read_thresholds(fs::path(out) / "thresholds.csv");
        REQUIRE(ts.size() == 4);
        for (const auto& t : ts) {
            std::vector<double> v;
            for (const auto& r : recs)
                if (r.scorer == t.scorer) v.push_back(r.score);
            CHECK(v.size() == 4);
            CHECK(t.tau == calibrate_threshold(v, 0.95).tau);
        }
        REQUIRE(cli({"calibrate", "--checkpoint", ckpt, "--data-root", data, "--out", out, "--target-tpr", "1.0",
                     "--scorers", "msp"})
                    .code == kExitOk);
        const auto t1 = read_thresholds(fs::path(out) / "thresholds.csv");
        double lo = 1e300;
        for (const auto& r : read_score_dump(fs::path(out) / "calib_scores.csv")) lo = std::min(lo, r.score);
        CHECK(t1[0].tau == lo);

        const Run missing = cli({"calibrate", "--checkpoint", ckpt, "--data-root", data, "--manifest", "id_test.csv",
                                 "--out", out});
        CHECK(missing.code == kExitData);
        CHECK(missing.err.find("calib") != std::string::npos);

        const std::string img = (fs::path(data) / "id/images/disk_0000.pgm").string();
        const Run sc = cli({"score", "--checkpoint", ckpt, "--input", img, "--thresholds",
                            (fs::path(out) / "thresholds.csv").string(), "--scorers", "msp"});
        CHECK(sc.code == kExitOk);
        CHECK(lines_of(sc.out).size() == 1);
        CHECK((sc.out.find(",ID") != std::string::npos || sc.out.find(",OOD") != std::string::npos));
    }

    SUBCASE("eval") {
        const std::string out = (root / "eval").string();
        const Run ev = cli({"eval", "--checkpoint", ckpt, "--data-root", data, "--out", out, "--ood", "ood_noise.csv",
                            "--ood", "ood_rings.csv", "--scorers", "mecam,msp,energy,mood", "--workers", "4"});
        REQUIRE(ev.code == kExitOk);
        const auto reports = read_report(fs::path(out) / "report.csv");
        REQUIRE(reports.size() == 4);
        const auto recs = read_score_dump(fs::path(out) / "scores.csv");
        CHECK(std::is_sorted(recs.begin(), recs.end(),
                             [](const ScoreRecord& a, const ScoreRecord& b) { return a.sample_id < b.sample_id; }));
        for (const auto& rep : reports) {
            const Scorer s = parse_scorer(rep.scorer);
            std::vector<double> id, ood;
            for (const auto& r : recs)
                if (r.scorer == s) (r.label == Verdict::id ? id : ood).push_back(r.score);
            const EvalReport again = evaluate_scores(rep.scorer, id, ood);
            CHECK(again.auroc == rep.auroc);
            CHECK(again.fpr95 == rep.fpr95);
            CHECK(again.tau == rep.tau);
            CHECK(rep.n_id == 8);
            CHECK(rep.n_ood == 16);
        }
        // Single-threaded run gives the same bytes.
        const std::string out1 = (root / "eval1").string();
        REQUIRE(cli({"eval", "--checkpoint", ckpt, "--data-root", data, "--out", out1, "--ood", "ood_noise.csv",
                     "--ood", "ood_rings.csv", "--scorers", "mecam,msp,energy,mood"})
                    .code == kExitOk);
        CHECK(slurp(fs::path(out1) / "scores.csv") == slurp(fs::path(out) / "scores.csv"));
        CHECK(slurp(fs::path(out1) / "report.csv") == slurp(fs::path(out) / "report.csv"));

        const std::string out2 = (root / "eval2").string();
        REQUIRE(cli({"eval", "--checkpoint", ckpt, "--data-root", data, "--out", out2, "--ood", "ood_rings.csv",
                     "--scorers", "mecam", "--exit-mask", "4"})
                    .code == kExitOk);
        CHECK(read_report(fs::path(out2) / "report.csv")[0].scorer == "mecam@4");
        CHECK(cli({"eval", "--checkpoint", ckpt, "--data-root", data, "--out", out2}).code == kExitUsage);
        CHECK(cli({"eval", "--checkpoint", ckpt, "--data-root", data, "--out", out2, "--ood", "ood_rings.csv",
                   "--exit-mask", "7"})
                  .code == kExitUsage);
    }

    SUBCASE("cam") {
        const std::string out = (root / "cam").string();
        const std::string img = (fs::path(data) / "id/images/square_0000.pgm").string();
        REQUIRE(cli({"cam", "--checkpoint", ckpt, "--input", img, "--out", out}).code == kExitOk);
        for (const char* f : {"exit1.pgm", "exit2.pgm", "exit3.pgm", "exit4.pgm", "aggregate.pgm", "masked.ppm"})
            CHECK(fs::exists(fs::path(out) / f));
        CHECK(read_pnm(fs::path(out) / "masked.ppm").channels == 3);
        CHECK(read_pnm(fs::path(out) / "aggregate.pgm").width == 16);

        const std::string one = (root / "cam1").string();
        REQUIRE(cli({"cam", "--checkpoint", ckpt, "--input", img, "--out", one, "--exit-mask", "3"}).code == kExitOk);
        CHECK(slurp(fs::path(one) / "aggregate.pgm") == slurp(fs::path(one) / "exit3.pgm"));
        CHECK_FALSE(fs::exists(fs::path(one) / "exit1.pgm"));
    }
    fs::remove_all(root);
}
