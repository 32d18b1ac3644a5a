#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mecam/cam.hpp"
#include "mecam/model.hpp"
#include "mecam/scoring.hpp"
#include "mecam/train.hpp"

namespace mecam {

/// Effective settings of one CLI run.
///
/// Sources, lowest precedence first: built-in defaults, the key=value config
/// file, the MECAM_SEED environment variable (seed only), command-line flags.
struct RunConfig {
    std::uint64_t seed = 42;
    int epochs = 30;
    int batch_size = 32;
    double lr_start = 0.01;
    double lr_end = 1e-4;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    int input_size = 32;
    int in_channels = 1;
    int num_classes = 2;
    std::vector<int> stage_widths{8, 16, 32, 64};
    std::vector<int> exit_stages{1, 2, 3, 4};
    std::vector<double> exit_loss_weights;  // empty = uniform
    ExitMask exit_mask;                     // empty = every configured exit
    double target_tpr = 0.95;
    std::vector<Scorer> scorers{Scorer::mecam, Scorer::msp, Scorer::energy, Scorer::mood_energy};
    std::optional<int> mood_exit;  // empty = final exit
    std::string data_root = ".";
    std::string manifest = "id.csv";
    std::vector<std::string> ood_manifest;
    std::string checkpoint;
    std::string out_dir = ".";
};

/// Sets one key from its textual value. Throws UsageError naming unknown keys
/// or unparsable values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Flat `key=value` lines; `#` starts a comment; blank lines are ignored.
void apply_config_text(RunConfig& config, const std::string& text);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// Applies MECAM_SEED when set.
void apply_seed_env(RunConfig& config);

/// Every key in canonical order; parses back to an identical config.
std::string format_config(const RunConfig& config);
void write_resolved_config(const RunConfig& config, const std::filesystem::path& out_dir);

ModelConfig model_config(const RunConfig& config);
TrainOptions train_options(const RunConfig& config);
ScoreOptions score_options(const RunConfig& config);

}  // namespace mecam
