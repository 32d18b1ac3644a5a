#include "mecam/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mecam/error.hpp"
#include "mecam/ops.hpp"

namespace mecam {

const char* to_string(Scorer scorer) {
    switch (scorer) {
        case Scorer::mecam: return "mecam";
        case Scorer::msp: return "msp";
        case Scorer::energy: return "energy";
        case Scorer::mood_energy: return "mood_energy";
    }
    return "?";
}

Scorer parse_scorer(const std::string& name) {
    if (name == "mecam") return Scorer::mecam;
    if (name == "msp") return Scorer::msp;
    if (name == "energy") return Scorer::energy;
    if (name == "mood_energy" || name == "mood") return Scorer::mood_energy;
    throw UsageError("unknown scorer '" + name + "'");
}

std::vector<Scorer> parse_scorer_list(const std::string& comma_separated) {
    std::vector<Scorer> out;
    std::stringstream ss(comma_separated);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        item = item.substr(b, item.find_last_not_of(" \t") - b + 1);
        const Scorer s = parse_scorer(item);
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    }
    if (out.empty()) throw UsageError("empty scorer list");
    return out;
}

const char* to_string(Verdict verdict) { return verdict == Verdict::id ? "ID" : "OOD"; }

Verdict parse_verdict(const std::string& text) {
    if (text == "ID") return Verdict::id;
    if (text == "OOD") return Verdict::ood;
    throw DataError(DataErrorKind::malformed, "label must be ID or OOD, got '" + text + "'");
}

double feature_shift(std::span<const float> original, std::span<const float> masked) {
    if (original.size() != masked.size() || original.empty()) {
        throw ShapeError("feature_shift: embeddings differ in size or are empty");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < original.size(); ++i) {
        const double d = static_cast<double>(original[i]) - masked[i];
        acc += d * d;
    }
    return acc / static_cast<double>(original.size());
}

double mecam_score(const Model& model, const Tensor& image, const ExitMask& mask) {
    const CamResult cam = cam_pipeline(model, image, mask);
    const ExitOutputs shifted = forward(model, cam.masked);
    return feature_shift(cam.outputs.embedding.data(), shifted.embedding.data());
}

double msp_score(std::span<const float> logits) {
    const double lse = logsumexp(logits);
    const float mx = *std::max_element(logits.begin(), logits.end());
    return std::exp(static_cast<double>(mx) - lse);
}

double energy_score(std::span<const float> logits) { return logsumexp(logits); }

double mood_energy_score(const ExitOutputs& outputs, int stage) {
    return logsumexp(outputs.exits[outputs.index_of_stage(stage)].logits.data());
}

std::vector<ScoreRecord> score_sample(const Model& model, const std::string& sample_id, const Tensor& image,
                                      Verdict truth, std::span<const Scorer> scorers, const ScoreOptions& options) {
    const bool want_mecam = std::find(scorers.begin(), scorers.end(), Scorer::mecam) != scorers.end();
    ExitOutputs outputs;
    double mecam = 0.0;
    if (want_mecam) {
        CamResult cam = cam_pipeline(model, image, options.exit_mask);
        const ExitOutputs shifted = forward(model, cam.masked);
        mecam = feature_shift(cam.outputs.embedding.data(), shifted.embedding.data());
        outputs = std::move(cam.outputs);
    } else {
        outputs = forward(model, image);
    }
    const int pred = predicted_class(outputs);
    const auto final_logits = outputs.final_exit().logits.data();
    std::vector<ScoreRecord> out;
    for (Scorer s : scorers) {
        double v = 0.0;
        switch (s) {
            case Scorer::mecam: v = mecam; break;
            case Scorer::msp: v = msp_score(final_logits); break;
            case Scorer::energy: v = energy_score(final_logits); break;
            case Scorer::mood_energy:
                v = mood_energy_score(outputs, options.mood_stage.value_or(outputs.final_exit().stage));
                break;
        }
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + to_string(s) + " score for " + sample_id);
        out.push_back(ScoreRecord{sample_id, s, v, truth, pred});
    }
    return out;
}

Threshold calibrate_threshold(std::span<const double> id_scores, double target_tpr, Scorer scorer) {
    if (id_scores.empty()) throw UsageError("calibrate_threshold: no calibration scores");
    if (!(target_tpr > 0.0 && target_tpr <= 1.0)) throw UsageError("target_tpr must be in (0, 1]");
    std::vector<double> sorted(id_scores.begin(), id_scores.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    // The epsilon keeps products like 0.95 * 100 from rounding up past an integer.
    auto must_pass = static_cast<std::size_t>(std::ceil(target_tpr * static_cast<double>(n) - 1e-9));
    must_pass = std::clamp<std::size_t>(must_pass, 1, n);
    return Threshold{scorer, sorted[n - must_pass], target_tpr, n};
}

Verdict classify(double score, const Threshold& threshold) {
    return score >= threshold.tau ? Verdict::id : Verdict::ood;
}

std::string format_real(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

double parse_real(const std::string& text) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw DataError(DataErrorKind::malformed, "not a number: '" + text + "'");
    }
    return v;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    return out;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataErrorKind::missing_file, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spill(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(DataErrorKind::io, "cannot write " + path.string());
    out << text;
    if (!out) throw DataError(DataErrorKind::io, "write failed for " + path.string());
}

}  // namespace

std::string format_score_dump(const std::vector<ScoreRecord>& records) {
    std::string out = "sample_id,scorer,score,label,pred_class\n";
    for (const auto& r : records) {
        out += r.sample_id + ',' + to_string(r.scorer) + ',' + format_real(r.score) + ',' + to_string(r.label) + ',' +
               std::to_string(r.pred_class) + '\n';
    }
    return out;
}

std::vector<ScoreRecord> parse_score_dump(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || split_fields(line) != std::vector<std::string>{"sample_id", "scorer", "score", "label", "pred_class"}) {
        throw DataError(DataErrorKind::malformed, "score dump header must be 'sample_id,scorer,score,label,pred_class'");
    }
    std::vector<ScoreRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 5) throw DataError(DataErrorKind::malformed, "score dump row needs 5 fields: " + line);
        out.push_back(ScoreRecord{f[0], parse_scorer(f[1]), parse_real(f[2]), parse_verdict(f[3]), std::stoi(f[4])});
    }
    return out;
}

void write_score_dump(const std::filesystem::path& path, const std::vector<ScoreRecord>& records) {
    spill(path, format_score_dump(records));
}

std::vector<ScoreRecord> read_score_dump(const std::filesystem::path& path) { return parse_score_dump(slurp(path)); }

void write_thresholds(const std::filesystem::path& path, const std::vector<Threshold>& thresholds) {
    std::string out = "scorer,tau,target_tpr\n";
    for (const auto& t : thresholds) {
        out += std::string(to_string(t.scorer)) + ',' + format_real(t.tau) + ',' + format_real(t.target_tpr) + '\n';
    }
    spill(path, out);
}

std::vector<Threshold> read_thresholds(const std::filesystem::path& path) {
    std::istringstream in(slurp(path));
    std::string line;
    if (!std::getline(in, line) || split_fields(line) != std::vector<std::string>{"scorer", "tau", "target_tpr"}) {
        throw DataError(DataErrorKind::malformed, "threshold file header must be 'scorer,tau,target_tpr'");
    }
    std::vector<Threshold> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 3) throw DataError(DataErrorKind::malformed, "threshold row needs 3 fields: " + line);
        out.push_back(Threshold{parse_scorer(f[0]), parse_real(f[1]), parse_real(f[2]), 0});
    }
    return out;
}

}  // namespace mecam
