#include "mecam/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mecam/error.hpp"

namespace mecam {

namespace {

void require_nonempty(std::span<const double> id, std::span<const double> ood, const char* what) {
    if (id.empty() || ood.empty()) throw UsageError(std::string(what) + ": both ID and OOD scores are required");
}

/// Number of elements of ascending `sorted` that are >= t.
std::size_t count_at_least(const std::vector<double>& sorted, double t) {
    return static_cast<std::size_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
}

std::vector<std::string> fields(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    return out;
}

}  // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    require_nonempty(id_scores, ood_scores, "auroc");
    struct Item {
        double score;
        bool is_id;
    };
    std::vector<Item> all;
    all.reserve(id_scores.size() + ood_scores.size());
    for (double s : id_scores) all.push_back({s, true});
    for (double s : ood_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

    double id_rank_sum = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        // 1-based ranks i+1 .. j share the midrank.
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (all[k].is_id) id_rank_sum += midrank;
        }
        i = j;
    }
    const double n_id = static_cast<double>(id_scores.size());
    const double n_ood = static_cast<double>(ood_scores.size());
    const double u = id_rank_sum - n_id * (n_id + 1.0) / 2.0;
    return u / (n_id * n_ood);
}

FprAtTpr fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double target_tpr) {
    require_nonempty(id_scores, ood_scores, "fpr_at_tpr");
    const Threshold t = calibrate_threshold(id_scores, target_tpr);
    const auto admitted = std::count_if(ood_scores.begin(), ood_scores.end(), [&](double s) { return s >= t.tau; });
    return FprAtTpr{static_cast<double>(admitted) / static_cast<double>(ood_scores.size()), t.tau};
}

std::vector<RocPoint> roc_curve(std::span<const double> id_scores, std::span<const double> ood_scores) {
    require_nonempty(id_scores, ood_scores, "roc_curve");
    std::vector<double> id(id_scores.begin(), id_scores.end());
    std::vector<double> ood(ood_scores.begin(), ood_scores.end());
    std::sort(id.begin(), id.end());
    std::sort(ood.begin(), ood.end());
    std::set<double, std::greater<>> thresholds(id.begin(), id.end());
    thresholds.insert(ood.begin(), ood.end());

    std::vector<RocPoint> out{{0.0, 0.0}};
    for (double t : thresholds) {
        out.push_back(RocPoint{static_cast<double>(count_at_least(ood, t)) / static_cast<double>(ood.size()),
                               static_cast<double>(count_at_least(id, t)) / static_cast<double>(id.size())});
    }
    return out;
}

double trapezoid_area(std::span<const RocPoint> points) {
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
    }
    return area;
}

EvalReport evaluate_scores(const std::string& scorer, std::span<const double> id_scores,
                           std::span<const double> ood_scores, double target_tpr) {
    EvalReport r;
    r.scorer = scorer;
    r.n_id = id_scores.size();
    r.n_ood = ood_scores.size();
    r.auroc = auroc(id_scores, ood_scores);
    const auto f = fpr_at_tpr(id_scores, ood_scores, target_tpr);
    r.fpr95 = f.fpr;
    r.tau = f.tau;
    r.roc = roc_curve(id_scores, ood_scores);
    return r;
}

std::vector<MixedSample> mixed_testset(const Dataset& id, const Dataset& ood) {
    if (id.empty()) throw UsageError("mixed_testset: ID set is empty");
    if (ood.empty()) throw UsageError("mixed_testset: OOD set is empty; evaluation is undefined");
    std::set<std::string> seen;
    std::vector<MixedSample> out;
    out.reserve(id.size() + ood.size());
    for (const auto& s : id) {
        if (!seen.insert(s.id).second) throw DataError(DataErrorKind::duplicate_id, "sample id collision: " + s.id);
        out.push_back(MixedSample{s, Verdict::id});
    }
    for (const auto& s : ood) {
        if (!seen.insert(s.id).second) throw DataError(DataErrorKind::duplicate_id, "sample id collision: " + s.id);
        MixedSample m{s, Verdict::ood};
        m.sample.label.reset();
        out.push_back(std::move(m));
    }
    return out;
}

void emit_report(std::span<const EvalReport> reports, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream rep(out_dir / "report.csv", std::ios::binary | std::ios::trunc);
    if (!rep) throw DataError(DataErrorKind::io, "cannot write " + (out_dir / "report.csv").string());
    rep << "scorer,auroc,fpr95,tau,n_id,n_ood\n";
    for (const auto& r : reports) {
        rep << r.scorer << ',' << format_real(r.auroc) << ',' << format_real(r.fpr95) << ',' << format_real(r.tau) << ','
            << r.n_id << ',' << r.n_ood << '\n';
        std::ofstream roc(out_dir / ("roc_" + r.scorer + ".csv"), std::ios::binary | std::ios::trunc);
        if (!roc) throw DataError(DataErrorKind::io, "cannot write ROC file for " + r.scorer);
        roc << "fpr,tpr\n";
        for (const auto& p : r.roc) roc << format_real(p.fpr) << ',' << format_real(p.tpr) << '\n';
        if (!roc) throw DataError(DataErrorKind::io, "write failed for ROC file of " + r.scorer);
    }
    if (!rep) throw DataError(DataErrorKind::io, "write failed for report.csv");
}

std::vector<EvalReport> read_report(const std::filesystem::path& report_csv) {
    std::ifstream in(report_csv);
    if (!in) throw DataError(DataErrorKind::missing_file, "cannot open " + report_csv.string());
    std::string line;
    if (!std::getline(in, line) || fields(line) != std::vector<std::string>{"scorer", "auroc", "fpr95", "tau", "n_id", "n_ood"}) {
        throw DataError(DataErrorKind::malformed, "report header must be 'scorer,auroc,fpr95,tau,n_id,n_ood'");
    }
    std::vector<EvalReport> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = fields(line);
        if (f.size() != 6) throw DataError(DataErrorKind::malformed, "report row needs 6 fields: " + line);
        EvalReport r;
        r.scorer = f[0];
        r.auroc = parse_real(f[1]);
        r.fpr95 = parse_real(f[2]);
        r.tau = parse_real(f[3]);
        r.n_id = std::stoul(f[4]);
        r.n_ood = std::stoul(f[5]);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<RocPoint> read_roc(const std::filesystem::path& roc_csv) {
    std::ifstream in(roc_csv);
    if (!in) throw DataError(DataErrorKind::missing_file, "cannot open " + roc_csv.string());
    std::string line;
    if (!std::getline(in, line) || fields(line) != std::vector<std::string>{"fpr", "tpr"}) {
        throw DataError(DataErrorKind::malformed, "ROC header must be 'fpr,tpr'");
    }
    std::vector<RocPoint> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = fields(line);
        if (f.size() != 2) throw DataError(DataErrorKind::malformed, "ROC row needs 2 fields: " + line);
        out.push_back(RocPoint{parse_real(f[0]), parse_real(f[1])});
    }
    return out;
}

std::string format_report_table(std::span<const EvalReport> reports) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-14s %8s %8s %6s %6s\n", "scorer", "AUROC", "FPR95", "n_id", "n_ood");
    out += buf;
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-14s %8.4f %8.4f %6zu %6zu\n", r.scorer.c_str(), r.auroc, r.fpr95, r.n_id, r.n_ood);
        out += buf;
    }
    return out;
}

}  // namespace mecam
