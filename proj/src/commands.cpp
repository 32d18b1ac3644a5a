#include "mecam/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <thread>

#include "mecam/cam.hpp"
#include "mecam/checkpoint.hpp"
#include "mecam/dataset.hpp"
#include "mecam/error.hpp"
#include "mecam/metrics.hpp"
#include "mecam/netpbm.hpp"
#include "mecam/run_config.hpp"
#include "mecam/scoring.hpp"
#include "mecam/synth.hpp"
#include "mecam/train.hpp"

namespace mecam {

namespace {

namespace fs = std::filesystem;

/// Options shared by every config-driven subcommand.
struct ConfigArgs {
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::vector<std::string> ood;
    std::vector<std::string> sets;

    void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(
            flag, [this, key](const std::string& v) { overrides.emplace_back(key, v); }, help);
    }

    RunConfig resolve() const {
        RunConfig c;
        if (!config_file.empty()) apply_config_file(c, config_file);
        apply_seed_env(c);
        for (const auto& [k, v] : overrides) apply_setting(c, k, v);
        if (!ood.empty()) {
            std::string joined;
            for (const auto& o : ood) joined += (joined.empty() ? "" : ",") + o;
            apply_setting(c, "ood_manifest", joined);
        }
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
            apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
        }
        return c;
    }
};

void add_config_file(CLI::App* app, ConfigArgs& a) {
    app->add_option("--config", a.config_file, "key=value config file");
    app->add_option("--set", a.sets, "Override any config key (key=value, repeatable)");
}

Model require_checkpoint(const RunConfig& c) {
    if (c.checkpoint.empty()) throw UsageError("no checkpoint given (--checkpoint or checkpoint=)");
    return load_checkpoint(c.checkpoint);
}

LoadOptions load_options(const ModelConfig& m) {
    LoadOptions o;
    o.input_size = m.input_size;
    o.channels = m.in_channels;
    o.num_classes = m.num_classes;
    return o;
}

Dataset load_split(const RunConfig& c, const ModelConfig& m, Split split, bool labels) {
    LoadOptions o = load_options(m);
    o.split = split;
    o.require_labels = labels;
    Dataset d = load_dataset(c.data_root, c.manifest, o);
    if (d.empty()) {
        throw DataError(DataErrorKind::malformed,
                        "manifest " + c.manifest + " has no rows in split '" + to_string(split) + "'");
    }
    return d;
}

Tensor load_input(const std::string& path, const ModelConfig& m) {
    const Image img = read_pnm(path);
    if (static_cast<int>(img.channels) != m.in_channels) {
        throw DataError(DataErrorKind::malformed, path + ": has " + std::to_string(img.channels) +
                                                      " channel(s), model expects " + std::to_string(m.in_channels));
    }
    const auto n = static_cast<std::size_t>(m.input_size);
    return resize_image(image_to_tensor(img), n, n);
}

struct Item {
    const ImageSample* sample;
    Verdict truth;
};

/// Scores every item, in parallel when workers > 1. Output is sorted by sample id,
/// keeping the requested scorer order within a sample.
std::vector<ScoreRecord> score_items(const Model& model, const std::vector<Item>& items,
                                     const std::vector<Scorer>& scorers, const ScoreOptions& options, int workers) {
    std::vector<std::vector<ScoreRecord>> per_item(items.size());
    auto work = [&](std::size_t i) {
        per_item[i] = score_sample(model, items[i].sample->id, items[i].sample->pixels, items[i].truth, scorers, options);
    };
    const std::size_t n_workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, items.size());
    if (n_workers <= 1) {
        for (std::size_t i = 0; i < items.size(); ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(n_workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = next++; i < items.size(); i = next++) work(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                    next = items.size();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    std::vector<ScoreRecord> out;
    for (auto& recs : per_item) out.insert(out.end(), recs.begin(), recs.end());
    std::stable_sort(out.begin(), out.end(),
                     [](const ScoreRecord& a, const ScoreRecord& b) { return a.sample_id < b.sample_id; });
    return out;
}

/// Report row name: the scorer, tagged with its exit choice when it is not the default.
std::string report_name(Scorer s, const ModelConfig& m, const ScoreOptions& o) {
    std::string name = to_string(s);
    if (s == Scorer::mecam) {
        const ExitMask mask = resolve_exit_mask(m, o.exit_mask);
        if (mask != resolve_exit_mask(m, {})) {
            name += '@';
            for (std::size_t i = 0; i < mask.size(); ++i) name += (i ? "+" : "") + std::to_string(mask[i]);
        }
    } else if (s == Scorer::mood_energy && o.mood_stage && *o.mood_stage != m.exit_stages.back()) {
        name += '@' + std::to_string(*o.mood_stage);
    }
    return name;
}

void check_score_options(const ModelConfig& m, const ScoreOptions& o) {
    (void)resolve_exit_mask(m, o.exit_mask);
    if (o.mood_stage &&
        std::find(m.exit_stages.begin(), m.exit_stages.end(), *o.mood_stage) == m.exit_stages.end()) {
        throw UsageError("mood_exit " + std::to_string(*o.mood_stage) + " is not an exit stage");
    }
}

int cmd_synth(const fs::path& out_dir, std::optional<std::uint64_t> seed, int n_per_class, int image_size, bool force,
              std::ostream& out) {
    RunConfig seeds;
    apply_seed_env(seeds);
    SynthOptions o;
    o.seed = seed.value_or(seeds.seed);
    o.n_per_class = n_per_class;
    o.image_size = image_size;
    o.force = force;
    const SynthSummary s = synth_generate(out_dir, o);
    out << "synth: id train=" << s.id_train << " calib=" << s.id_calib << " test=" << s.id_test
        << "; ood per family=" << s.ood_per_family << " -> " << out_dir.string() << '\n';
    return kExitOk;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
    const ModelConfig mc = model_config(c);
    const Dataset data = load_split(c, mc, Split::train, true);
    const fs::path dir = c.out_dir;
    write_resolved_config(c, dir);
    Model model = build(mc, c.seed);
    std::ofstream log(dir / "loss_log.csv", std::ios::binary | std::ios::trunc);
    if (!log) throw DataError(DataErrorKind::io, "cannot write " + (dir / "loss_log.csv").string());
    log << "epoch,lr,loss,train_acc\n";
    train(model, data, train_options(c), [&](const EpochStats& s) {
        log << s.epoch << ',' << format_real(s.lr) << ',' << format_real(s.loss) << ',' << format_real(s.accuracy)
            << '\n';
        char line[128];
        std::snprintf(line, sizeof line, "epoch %3d  lr %.6f  loss %.4f  acc %.4f\n", s.epoch, s.lr, s.loss, s.accuracy);
        out << line << std::flush;
    });
    log.close();
    save_checkpoint(model, dir / "model.ckpt");
    char line[96];
    std::snprintf(line, sizeof line, "final_train_acc=%.4f\n", evaluate_accuracy(model, data));
    out << line;
    return kExitOk;
}

int cmd_calibrate(const RunConfig& c, int workers, std::ostream& out) {
    const Model model = require_checkpoint(c);
    const ModelConfig& mc = model.config();
    const ScoreOptions so = score_options(c);
    check_score_options(mc, so);
    const Dataset calib = load_split(c, mc, Split::calib, false);
    std::vector<Item> items;
    for (const auto& s : calib) items.push_back({&s, Verdict::id});
    const auto records = score_items(model, items, c.scorers, so, workers);
    const fs::path dir = c.out_dir;
    write_resolved_config(c, dir);
    write_score_dump(dir / "calib_scores.csv", records);
    std::vector<Threshold> thresholds;
    for (Scorer s : c.scorers) {
        std::vector<double> v;
        for (const auto& r : records) {
            if (r.scorer == s) v.push_back(r.score);
        }
        thresholds.push_back(calibrate_threshold(v, c.target_tpr, s));
        out << to_string(s) << " tau=" << format_real(thresholds.back().tau) << " (n=" << v.size() << ")\n";
    }
    write_thresholds(dir / "thresholds.csv", thresholds);
    return kExitOk;
}

int cmd_score(const RunConfig& c, const std::string& input, const std::string& thresholds_path, std::ostream& out) {
    const Model model = require_checkpoint(c);
    const ScoreOptions so = score_options(c);
    check_score_options(model.config(), so);
    const Tensor x = load_input(input, model.config());
    std::map<Scorer, double> taus;
    if (!thresholds_path.empty()) {
        for (const auto& t : read_thresholds(thresholds_path)) taus[t.scorer] = t.tau;
    }
    const auto records = score_sample(model, input, x, Verdict::id, c.scorers, so);
    for (const auto& r : records) {
        out << input << ',' << to_string(r.scorer) << ',' << format_real(r.score) << ',' << r.pred_class;
        if (const auto it = taus.find(r.scorer); it != taus.end()) {
            out << ',' << to_string(classify(r.score, Threshold{r.scorer, it->second, c.target_tpr, 0}));
        }
        out << '\n';
    }
    return kExitOk;
}

int cmd_eval(const RunConfig& c, int workers, std::ostream& out) {
    const Model model = require_checkpoint(c);
    const ModelConfig& mc = model.config();
    const ScoreOptions so = score_options(c);
    check_score_options(mc, so);
    if (c.ood_manifest.empty()) throw UsageError("eval needs an OOD manifest (--ood or ood_manifest=)");
    const Dataset id = load_split(c, mc, Split::test, false);
    Dataset ood;
    for (const auto& m : c.ood_manifest) {
        Dataset part = load_dataset(c.data_root, m, load_options(mc));
        ood.insert(ood.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    const auto mixed = mixed_testset(id, ood);
    std::vector<Item> items;
    for (const auto& m : mixed) items.push_back({&m.sample, m.truth});
    const auto records = score_items(model, items, c.scorers, so, workers);

    const fs::path dir = c.out_dir;
    write_resolved_config(c, dir);
    write_score_dump(dir / "scores.csv", records);
    std::vector<EvalReport> reports;
    for (Scorer s : c.scorers) {
        std::vector<double> id_scores, ood_scores;
        for (const auto& r : records) {
            if (r.scorer != s) continue;
            (r.label == Verdict::id ? id_scores : ood_scores).push_back(r.score);
        }
        reports.push_back(evaluate_scores(report_name(s, mc, so), id_scores, ood_scores, c.target_tpr));
    }
    emit_report(reports, dir);
    out << format_report_table(reports);
    return kExitOk;
}

int cmd_cam(const RunConfig& c, const std::string& input, std::ostream& out) {
    const Model model = require_checkpoint(c);
    const ModelConfig& mc = model.config();
    const Tensor x = load_input(input, mc);
    const CamResult r = cam_pipeline(model, x, c.exit_mask);
    const std::size_t h = x.dim(2), w = x.dim(3);
    const fs::path dir = c.out_dir;
    write_resolved_config(c, dir);
    for (std::size_t e = 0; e < r.bundle.exit_stages.size(); ++e) {
        const Heatmap up = upsample_bilinear(r.bundle.exit_cams[e], h, w);
        write_pnm(dir / ("exit" + std::to_string(r.bundle.exit_stages[e]) + ".pgm"), heat_to_image(up.values, h, w));
    }
    write_pnm(dir / "aggregate.pgm", heat_to_image(r.bundle.aggregated.values, h, w));
    Image masked = tensor_to_image(r.masked);
    if (masked.channels == 1) {
        Image rgb{masked.width, masked.height, 3, {}};
        rgb.pixels.reserve(masked.pixels.size() * 3);
        for (auto p : masked.pixels) rgb.pixels.insert(rgb.pixels.end(), 3, p);
        masked = std::move(rgb);
    }
    write_bytes(dir / "masked.ppm", encode_ppm(masked));
    out << "predicted_class=" << r.bundle.predicted_class << " exits=";
    for (std::size_t e = 0; e < r.bundle.exit_stages.size(); ++e) {
        out << (e ? "," : "") << r.bundle.exit_stages[e] << ':' << format_real(r.bundle.weights[e]);
    }
    out << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"MECAM: multi-exit class activation map OOD detection"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "mecam 1.0");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate the synthetic ID/OOD dataset");
    std::string synth_out;
    std::optional<std::uint64_t> synth_seed;
    int n_per_class = 500, image_size = 32;
    bool force = false;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Generator seed (default: MECAM_SEED, else 42)");
    synth->add_option("--n-per-class", n_per_class, "Images per ID class")->capture_default_str();
    synth->add_option("--image-size", image_size, "Image side in pixels")->capture_default_str();
    synth->add_flag("--force", force, "Write into a non-empty directory");

    // config-driven subcommands
    ConfigArgs train_a, calib_a, score_a, eval_a, cam_a;
    int calib_workers = 1, eval_workers = 1;
    std::string score_input, score_thresholds, cam_input;

    auto* train_cmd = app.add_subcommand("train", "Train the multi-exit classifier");
    add_config_file(train_cmd, train_a);
    train_a.bind(train_cmd, "--data-root", "data_root", "Dataset root");
    train_a.bind(train_cmd, "--manifest", "manifest", "ID manifest (relative to the data root)");
    train_a.bind(train_cmd, "--out", "out_dir", "Output directory");
    train_a.bind(train_cmd, "--seed", "seed", "Seed");
    train_a.bind(train_cmd, "--epochs", "epochs", "Epochs");
    train_a.bind(train_cmd, "--batch-size", "batch_size", "Batch size");
    train_a.bind(train_cmd, "--lr-start", "lr_start", "Initial learning rate");
    train_a.bind(train_cmd, "--lr-end", "lr_end", "Final learning rate");
    train_a.bind(train_cmd, "--weight-decay", "weight_decay", "Weight decay");
    train_a.bind(train_cmd, "--momentum", "momentum", "SGD momentum");
    train_a.bind(train_cmd, "--exit-loss-weights", "exit_loss_weights", "Per-exit loss weights");

    auto* calib_cmd = app.add_subcommand("calibrate", "Calibrate thresholds on the ID calib split");
    add_config_file(calib_cmd, calib_a);
    calib_a.bind(calib_cmd, "--checkpoint", "checkpoint", "Model checkpoint");
    calib_a.bind(calib_cmd, "--data-root", "data_root", "Dataset root");
    calib_a.bind(calib_cmd, "--manifest", "manifest", "ID manifest");
    calib_a.bind(calib_cmd, "--out", "out_dir", "Output directory");
    calib_a.bind(calib_cmd, "--scorers", "scorers", "Comma-separated scorers");
    calib_a.bind(calib_cmd, "--exit-mask", "exit_mask", "Exit stages used by mecam");
    calib_a.bind(calib_cmd, "--mood-exit", "mood_exit", "Exit stage used by mood_energy");
    calib_a.bind(calib_cmd, "--target-tpr", "target_tpr", "Target true positive rate");
    calib_cmd->add_option("--workers", calib_workers, "Parallel scoring workers")->check(CLI::PositiveNumber);

    auto* score_cmd = app.add_subcommand("score", "Score a single image");
    add_config_file(score_cmd, score_a);
    score_a.bind(score_cmd, "--checkpoint", "checkpoint", "Model checkpoint");
    score_a.bind(score_cmd, "--scorers", "scorers", "Comma-separated scorers");
    score_a.bind(score_cmd, "--exit-mask", "exit_mask", "Exit stages used by mecam");
    score_a.bind(score_cmd, "--mood-exit", "mood_exit", "Exit stage used by mood_energy");
    score_cmd->add_option("--input", score_input, "PGM/PPM image")->required();
    score_cmd->add_option("--thresholds", score_thresholds, "thresholds.csv from calibrate");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate on a mixed ID/OOD test set");
    add_config_file(eval_cmd, eval_a);
    eval_a.bind(eval_cmd, "--checkpoint", "checkpoint", "Model checkpoint");
    eval_a.bind(eval_cmd, "--data-root", "data_root", "Dataset root");
    eval_a.bind(eval_cmd, "--manifest", "manifest", "ID manifest (test split is used)");
    eval_a.bind(eval_cmd, "--out", "out_dir", "Output directory");
    eval_a.bind(eval_cmd, "--scorers", "scorers", "Comma-separated scorers");
    eval_a.bind(eval_cmd, "--exit-mask", "exit_mask", "Exit stages used by mecam");
    eval_a.bind(eval_cmd, "--mood-exit", "mood_exit", "Exit stage used by mood_energy");
    eval_a.bind(eval_cmd, "--target-tpr", "target_tpr", "Target true positive rate");
    eval_cmd->add_option("--ood", eval_a.ood, "OOD manifest (repeatable)");
    eval_cmd->add_option("--workers", eval_workers, "Parallel scoring workers")->check(CLI::PositiveNumber);

    auto* cam_cmd = app.add_subcommand("cam", "Export CAM heatmaps and the masked image");
    add_config_file(cam_cmd, cam_a);
    cam_a.bind(cam_cmd, "--checkpoint", "checkpoint", "Model checkpoint");
    cam_a.bind(cam_cmd, "--out", "out_dir", "Output directory");
    cam_a.bind(cam_cmd, "--exit-mask", "exit_mask", "Exit stages to aggregate");
    cam_cmd->add_option("--input", cam_input, "PGM/PPM image")->required();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_out, synth_seed, n_per_class, image_size, force, out);
        if (train_cmd->parsed()) return cmd_train(train_a.resolve(), out);
        if (calib_cmd->parsed()) return cmd_calibrate(calib_a.resolve(), calib_workers, out);
        if (score_cmd->parsed()) return cmd_score(score_a.resolve(), score_input, score_thresholds, out);
        if (eval_cmd->parsed()) return cmd_eval(eval_a.resolve(), eval_workers, out);
        if (cam_cmd->parsed()) return cmd_cam(cam_a.resolve(), cam_input, out);
    } catch (const UsageError& e) {
        err << "mecam: usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "mecam: numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const DataError& e) {
        err << "mecam: data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "mecam: error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace mecam
