#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mecam/cam.hpp"
#include "mecam/model.hpp"

namespace mecam {

// Every scorer is oriented so that HIGHER means more in-distribution.
enum class Scorer { mecam, msp, energy, mood_energy };

const char* to_string(Scorer scorer);
/// Accepts the canonical names plus "mood" for mood_energy.
Scorer parse_scorer(const std::string& name);
std::vector<Scorer> parse_scorer_list(const std::string& comma_separated);

enum class Verdict { id, ood };
const char* to_string(Verdict verdict);
Verdict parse_verdict(const std::string& text);

/// (1/d) * sum_i (v_i - v'_i)^2 with 64-bit accumulation.
double feature_shift(std::span<const float> original, std::span<const float> masked);

/// Feature shift between embeddings of `image` and its CAM-masked copy.
double mecam_score(const Model& model, const Tensor& image, const ExitMask& mask);

/// max_c softmax(logits)_c.
double msp_score(std::span<const float> logits);
/// logsumexp(logits).
double energy_score(std::span<const float> logits);
/// logsumexp of the logits at the exit on `stage`.
double mood_energy_score(const ExitOutputs& outputs, int stage);

struct ScoreOptions {
    ExitMask exit_mask;          // for mecam; empty = all exits
    std::optional<int> mood_stage;  // default: final exit
};

struct ScoreRecord {
    std::string sample_id;
    Scorer scorer = Scorer::mecam;
    double score = 0.0;
    Verdict label = Verdict::id;  // ground truth
    int pred_class = 0;

    bool operator==(const ScoreRecord&) const = default;
};

/// One record per requested scorer, sharing a single forward pass where possible.
std::vector<ScoreRecord> score_sample(const Model& model, const std::string& sample_id, const Tensor& image,
                                      Verdict truth, std::span<const Scorer> scorers, const ScoreOptions& options);

struct Threshold {
    Scorer scorer = Scorer::mecam;
    double tau = 0.0;
    double target_tpr = 0.95;
    std::size_t calibration_size = 0;
};

/// Sort ascending, tau = scores[n - ceil(target_tpr * n)].
Threshold calibrate_threshold(std::span<const double> id_scores, double target_tpr = 0.95,
                              Scorer scorer = Scorer::mecam);

/// ID iff score >= tau.
Verdict classify(double score, const Threshold& threshold);

/// Score dump CSV: `sample_id,scorer,score,label,pred_class`, reals in shortest round-trip form.
std::string format_score_dump(const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> parse_score_dump(const std::string& text);
void write_score_dump(const std::filesystem::path& path, const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_score_dump(const std::filesystem::path& path);

/// Threshold file CSV: `scorer,tau,target_tpr`.
void write_thresholds(const std::filesystem::path& path, const std::vector<Threshold>& thresholds);
std::vector<Threshold> read_thresholds(const std::filesystem::path& path);

/// Shortest decimal that parses back to the same double.
std::string format_real(double value);
double parse_real(const std::string& text);

}  // namespace mecam
