#include "mecam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mecam/dataset.hpp"
#include "mecam/error.hpp"
#include "mecam/netpbm.hpp"

namespace mecam {

namespace {

struct Canvas {
    int size;
    std::vector<double> v;
    std::vector<std::uint8_t> mask;

    Canvas(int n, double background) : size(n), v(static_cast<std::size_t>(n * n), background), mask(v.size(), 0) {}

    void add_noise(SplitMix64& rng, double sigma) {
        for (auto& p : v) p += sigma * rng.normal();
    }

    SynthSample finish() const {
        SynthSample s;
        s.pixels.resize(v.size());
        // Quantized exactly as the PGM writer will store it.
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double c = std::clamp(v[i], 0.0, 1.0);
            s.pixels[i] = static_cast<float>(std::lround(c * 255.0)) / 255.0f;
        }
        s.mask = mask;
        return s;
    }
};

double background_level(SplitMix64& rng) { return rng.uniform(0.05, 0.35); }
double object_contrast(SplitMix64& rng) { return rng.uniform(0.35, 0.65); }

void paint_disk(Canvas& c, double cx, double cy, double r_outer, double r_inner, double level) {
    for (int y = 0; y < c.size; ++y) {
        for (int x = 0; x < c.size; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            const double d2 = dx * dx + dy * dy;
            if (d2 <= r_outer * r_outer && d2 >= r_inner * r_inner) {
                const auto i = static_cast<std::size_t>(y * c.size + x);
                c.v[i] = level;
                c.mask[i] = 1;
            }
        }
    }
}

}  // namespace

SynthSample render_id(int cls, int size, SplitMix64& rng) {
    const double bg = background_level(rng);
    const double level = bg + object_contrast(rng);
    Canvas c(size, bg);
    const double scale = size / 32.0;
    if (cls == 0) {
        const double r = rng.uniform(5.0, 10.0) * scale;
        const double cx = rng.uniform(r + 1.0, size - r - 1.0);
        const double cy = rng.uniform(r + 1.0, size - r - 1.0);
        paint_disk(c, cx, cy, r, 0.0, level);
    } else if (cls == 1) {
        const int side = std::max(2, static_cast<int>(std::lround((8 + static_cast<int>(rng.below(10))) * scale)));
        const int x0 = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size - side - 1)));
        const int y0 = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size - side - 1)));
        for (int y = y0; y < y0 + side; ++y) {
            for (int x = x0; x < x0 + side; ++x) {
                const auto i = static_cast<std::size_t>(y * size + x);
                c.v[i] = level;
                c.mask[i] = 1;
            }
        }
    } else {
        throw UsageError("synthetic ID class must be 0 or 1");
    }
    c.add_noise(rng, kSynthNoiseSigma);
    return c.finish();
}

SynthSample render_ood(const std::string& family, int size, SplitMix64& rng) {
    if (family == "noise") {
        Canvas c(size, background_level(rng));
        c.add_noise(rng, kSynthNoiseSigma);
        return c.finish();
    }
    if (family == "stripes") {
        const double bg = background_level(rng);
        const double level = bg + object_contrast(rng);
        const int period = 4 + static_cast<int>(rng.below(5));
        const int phase = static_cast<int>(rng.below(static_cast<std::uint64_t>(period)));
        Canvas c(size, bg);
        for (int y = 0; y < size; ++y) {
            if (((y + phase) % period) * 2 >= period) continue;
            for (int x = 0; x < size; ++x) {
                const auto i = static_cast<std::size_t>(y * size + x);
                c.v[i] = level;
                c.mask[i] = 1;
            }
        }
        c.add_noise(rng, kSynthNoiseSigma);
        return c.finish();
    }
    if (family == "rings") {
        const double bg = background_level(rng);
        const double level = bg + object_contrast(rng);
        const double scale = size / 32.0;
        const double r = rng.uniform(7.0, 12.0) * scale;
        const double thickness = rng.uniform(2.0, 3.5) * scale;
        const double cx = rng.uniform(r + 1.0, size - r - 1.0);
        const double cy = rng.uniform(r + 1.0, size - r - 1.0);
        Canvas c(size, bg);
        paint_disk(c, cx, cy, r, r - thickness, level);
        c.add_noise(rng, kSynthNoiseSigma);
        return c.finish();
    }
    throw UsageError("unknown OOD family '" + family + "'");
}

SplitCounts split_counts(int n_per_class) {
    const int train = static_cast<int>(std::lround(0.7 * n_per_class));
    const int calib = static_cast<int>(std::lround(0.1 * n_per_class));
    return SplitCounts{train, calib, n_per_class - train - calib};
}

namespace {

void write_sample(const std::filesystem::path& root, const std::string& rel_image, const SynthSample& s, int size) {
    const auto n = static_cast<std::size_t>(size);
    write_pnm(root / rel_image, heat_to_image(s.pixels, n, n));
    std::vector<float> m(s.mask.begin(), s.mask.end());
    write_pnm(root / mask_path_for(rel_image), heat_to_image(m, n, n));
}

std::string numbered(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04d.pgm", prefix, i);
    return buf;
}

}  // namespace

SynthSummary synth_generate(const std::filesystem::path& out_dir, const SynthOptions& options) {
    namespace fs = std::filesystem;
    if (options.n_per_class < 10) throw UsageError("n_per_class must be >= 10");
    if (options.image_size < 16) throw UsageError("image_size must be >= 16");
    std::error_code ec;
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !options.force) {
        throw UsageError("output directory " + out_dir.string() + " is not empty (use --force)");
    }
    fs::create_directories(out_dir / "id" / "images", ec);
    fs::create_directories(out_dir / "id" / "masks", ec);
    for (const auto& fam : kOodFamilies) {
        fs::create_directories(out_dir / "ood" / fam / "images", ec);
        fs::create_directories(out_dir / "ood" / fam / "masks", ec);
    }
    if (ec || !fs::is_directory(out_dir / "id" / "images")) {
        throw DataError(DataErrorKind::io, "cannot create directories under " + out_dir.string());
    }

    SplitMix64 master(options.seed);
    const SplitCounts counts = split_counts(options.n_per_class);
    SynthSummary summary;
    std::vector<ManifestRow> all, train, calib, test;
    std::uint64_t stream = 0;
    for (int cls = 0; cls < 2; ++cls) {
        for (int i = 0; i < options.n_per_class; ++i) {
            SplitMix64 rng = master.fork(stream++);
            const auto sample = render_id(cls, options.image_size, rng);
            const std::string rel = "id/images/" + numbered(cls == 0 ? "disk" : "square", i);
            write_sample(out_dir, rel, sample, options.image_size);
            const Split split = i < counts.train ? Split::train : i < counts.train + counts.calib ? Split::calib : Split::test;
            ManifestRow row{rel, cls, split};
            all.push_back(row);
            (split == Split::train ? train : split == Split::calib ? calib : test).push_back(row);
        }
    }
    write_manifest(out_dir / "id.csv", all);
    write_manifest(out_dir / "id_train.csv", train);
    write_manifest(out_dir / "id_calib.csv", calib);
    write_manifest(out_dir / "id_test.csv", test);
    summary.id_train = train.size();
    summary.id_calib = calib.size();
    summary.id_test = test.size();
    summary.manifests = {"id.csv", "id_train.csv", "id_calib.csv", "id_test.csv"};

    const int per_family = 2 * counts.test;
    for (const auto& fam : kOodFamilies) {
        std::vector<ManifestRow> rows;
        for (int i = 0; i < per_family; ++i) {
            SplitMix64 rng = master.fork(stream++);
            const auto sample = render_ood(fam, options.image_size, rng);
            const std::string rel = "ood/" + fam + "/images/" + numbered(fam.c_str(), i);
            write_sample(out_dir, rel, sample, options.image_size);
            rows.push_back(ManifestRow{rel, std::nullopt, Split::test});
        }
        write_manifest(out_dir / ("ood_" + fam + ".csv"), rows);
        summary.manifests.push_back("ood_" + fam + ".csv");
    }
    summary.ood_per_family = static_cast<std::size_t>(per_family);
    return summary;
}

}  // namespace mecam
