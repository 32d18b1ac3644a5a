#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mecam/dataset.hpp"
#include "mecam/scoring.hpp"

namespace mecam {

// ID is the positive class throughout.

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    bool operator==(const RocPoint&) const = default;
};

/// Mann-Whitney statistic via midranks: P(id > ood) + 0.5 * P(id == ood).
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

struct FprAtTpr {
    double fpr = 0.0;
    double tau = 0.0;
};

/// tau from calibrate_threshold(id_scores); fpr = fraction of OOD scores >= tau.
FprAtTpr fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double target_tpr = 0.95);

/// One point per distinct score threshold (descending), framed by (0,0) and (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> id_scores, std::span<const double> ood_scores);

double trapezoid_area(std::span<const RocPoint> points);

struct EvalReport {
    std::string scorer;
    std::size_t n_id = 0;
    std::size_t n_ood = 0;
    double auroc = 0.0;
    double fpr95 = 0.0;
    double tau = 0.0;
    std::vector<RocPoint> roc;
};

EvalReport evaluate_scores(const std::string& scorer, std::span<const double> id_scores,
                           std::span<const double> ood_scores, double target_tpr = 0.95);

struct MixedSample {
    ImageSample sample;
    Verdict truth = Verdict::id;
};

/// Union of an ID and an OOD test set with ground-truth labels. OOD class
/// labels are dropped. Throws on id collisions or an empty side.
std::vector<MixedSample> mixed_testset(const Dataset& id, const Dataset& ood);

/// Writes report.csv (scorer,auroc,fpr95,tau,n_id,n_ood) and roc_<scorer>.csv (fpr,tpr).
void emit_report(std::span<const EvalReport> reports, const std::filesystem::path& out_dir);
std::vector<EvalReport> read_report(const std::filesystem::path& report_csv);
std::vector<RocPoint> read_roc(const std::filesystem::path& roc_csv);

/// Human-readable table, AUROC and FPR95 with 4 decimals.
std::string format_report_table(std::span<const EvalReport> reports);

}  // namespace mecam
