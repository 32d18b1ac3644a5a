#include "mecam/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "mecam/error.hpp"
#include "mecam/netpbm.hpp"
#include "mecam/resample.hpp"

namespace mecam {

const char* to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::calib: return "calib";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::train;
    if (text == "calib") return Split::calib;
    if (text == "test") return Split::test;
    throw DataError(DataErrorKind::malformed, "unknown split '" + text + "'");
}

namespace {

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && s[i] == ' ') ++i;
    return s.substr(i);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::vector<ManifestRow> parse_manifest(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || trim(line) != "path,label,split") {
        throw DataError(DataErrorKind::malformed, "manifest header must be 'path,label,split'");
    }
    std::vector<ManifestRow> rows;
    std::set<std::string> seen;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != 3 || cells[0].empty()) {
            throw DataError(DataErrorKind::malformed, "manifest line " + std::to_string(lineno) + ": expected 3 fields");
        }
        ManifestRow row;
        row.path = cells[0];
        if (cells[1] != "-") {
            try {
                std::size_t used = 0;
                row.label = std::stoi(cells[1], &used);
                if (used != cells[1].size()) throw std::invalid_argument("junk");
            } catch (const std::exception&) {
                throw DataError(DataErrorKind::malformed,
                                "manifest line " + std::to_string(lineno) + ": bad label '" + cells[1] + "'");
            }
        }
        row.split = parse_split(cells[2]);
        if (!seen.insert(row.path).second) {
            throw DataError(DataErrorKind::duplicate_id, "manifest path listed twice: " + row.path);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_manifest(const std::vector<ManifestRow>& rows) {
    std::string out = "path,label,split\n";
    for (const auto& r : rows) {
        out += r.path;
        out += ',';
        out += r.label ? std::to_string(*r.label) : std::string("-");
        out += ',';
        out += to_string(r.split);
        out += '\n';
    }
    return out;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(DataErrorKind::missing_file, "cannot open manifest " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_manifest(ss.str());
    } catch (const DataError& e) {
        throw DataError(e.kind(), path.string() + ": " + e.what());
    }
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(DataErrorKind::io, "cannot write " + path.string());
    out << format_manifest(rows);
}

Tensor resize_image(const Tensor& image, std::size_t height, std::size_t width) {
    if (image.rank() != 4 || image.dim(0) != 1) throw ShapeError("resize_image expects 1xCxHxW, got " + shape_str(image.shape()));
    const std::size_t c = image.dim(1), h = image.dim(2), w = image.dim(3);
    if (h == height && w == width) return image.clone();
    Tensor out(Shape{1, c, height, width});
    auto dst = out.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const auto plane = resample_bilinear(image.data().subspan(ch * h * w, h * w), h, w, height, width);
        std::copy(plane.begin(), plane.end(), dst.begin() + static_cast<std::ptrdiff_t>(ch * height * width));
    }
    return out;
}

Dataset load_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest,
                     const LoadOptions& options) {
    const auto manifest_path = manifest.is_absolute() ? manifest : root / manifest;
    const auto rows = read_manifest(manifest_path);
    Dataset out;
    for (const auto& row : rows) {
        if (options.split && row.split != *options.split) continue;
        if (row.label && (*row.label < 0 || *row.label >= options.num_classes)) {
            throw DataError(DataErrorKind::label_out_of_range,
                            row.path + ": label " + std::to_string(*row.label) + " not in [0, " +
                                std::to_string(options.num_classes) + ")");
        }
        if (options.require_labels && !row.label) {
            throw DataError(DataErrorKind::malformed, row.path + ": labelled dataset row has no label");
        }
        const auto file = root / row.path;
        if (!std::filesystem::exists(file)) throw DataError(DataErrorKind::missing_file, file.string());
        const Image img = read_pnm(file);
        if (static_cast<int>(img.channels) != options.channels) {
            throw DataError(DataErrorKind::malformed, row.path + ": has " + std::to_string(img.channels) +
                                                          " channel(s), expected " + std::to_string(options.channels));
        }
        const auto n = static_cast<std::size_t>(options.input_size);
        out.push_back(ImageSample{row.path, resize_image(image_to_tensor(img), n, n), row.label});
    }
    return out;
}

Tensor flip_horizontal(const Tensor& image) {
    const auto& s = image.shape();
    if (s.size() != 4) throw ShapeError("flip_horizontal expects rank 4");
    Tensor out(s);
    const auto src = image.data();
    auto dst = out.data();
    const std::size_t rows = s[0] * s[1] * s[2], w = s[3];
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t x = 0; x < w; ++x) dst[r * w + x] = src[r * w + (w - 1 - x)];
    }
    return out;
}

Tensor scale_brightness(const Tensor& image, float factor) {
    Tensor out(image.shape());
    const auto src = image.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::clamp(src[i] * factor, 0.0f, 1.0f);
    return out;
}

AugmentDraw draw_augment(SplitMix64& rng) {
    AugmentDraw d;
    d.flip = rng.bernoulli(0.5);
    d.brightness = static_cast<float>(rng.uniform(0.9, 1.1));
    return d;
}

ImageSample apply_augment(const ImageSample& sample, const AugmentDraw& draw) {
    ImageSample out = sample;
    const Tensor px = draw.flip ? flip_horizontal(sample.pixels) : sample.pixels;
    out.pixels = scale_brightness(px, draw.brightness);
    return out;
}

ImageSample augment(const ImageSample& sample, SplitMix64& rng) { return apply_augment(sample, draw_augment(rng)); }

std::string mask_path_for(const std::string& image_path) {
    const std::string key = "images/";
    const auto pos = image_path.rfind(key);
    if (pos == std::string::npos) throw DataError(DataErrorKind::malformed, "no images/ component in " + image_path);
    return image_path.substr(0, pos) + "masks/" + image_path.substr(pos + key.size());
}

}  // namespace mecam
