#include "mecam/netpbm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "mecam/error.hpp"

namespace mecam {

namespace {

class HeaderParser {
public:
    explicit HeaderParser(std::span<const std::uint8_t> b) : bytes_(b) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const auto c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(c)) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size()) throw DataError(DataErrorKind::truncated, std::string("header ends before ") + what);
        if (!std::isdigit(bytes_[pos_])) throw DataError(DataErrorKind::malformed, std::string("expected ") + what);
        std::size_t v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > (1u << 24)) throw DataError(DataErrorKind::malformed, std::string(what) + " too large");
            ++pos_;
        }
        return v;
    }

    /// Exactly one whitespace byte separates maxval from the raster.
    void single_space() {
        if (pos_ >= bytes_.size()) throw DataError(DataErrorKind::truncated, "header ends before raster");
        if (!std::isspace(bytes_[pos_])) throw DataError(DataErrorKind::malformed, "missing whitespace after maxval");
        ++pos_;
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> encode_with_magic(const Image& image, const char* magic, std::size_t channels) {
    if (image.channels != channels) {
        throw ShapeError(std::string(magic) + " needs " + std::to_string(channels) + " channel(s), image has " +
                         std::to_string(image.channels));
    }
    if (image.pixels.size() != image.width * image.height * channels) throw ShapeError("image buffer size mismatch");
    const std::string header =
        std::string(magic) + "\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

}  // namespace

Image decode_pnm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw DataError(DataErrorKind::bad_magic, "expected binary P5 or P6");
    }
    HeaderParser p(bytes);
    p.advance(2);
    Image img;
    img.channels = bytes[1] == '5' ? 1 : 3;
    img.width = p.number("width");
    img.height = p.number("height");
    const std::size_t maxval = p.number("maxval");
    if (maxval != 255) throw DataError(DataErrorKind::bad_maxval, "maxval " + std::to_string(maxval) + " (need 255)");
    if (img.width == 0 || img.height == 0) throw DataError(DataErrorKind::malformed, "zero image extent");
    p.single_space();
    const std::size_t need = img.width * img.height * img.channels;
    if (bytes.size() - p.pos() < need) {
        throw DataError(DataErrorKind::truncated, "raster has " + std::to_string(bytes.size() - p.pos()) +
                                                      " bytes, expected " + std::to_string(need));
    }
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(p.pos()),
                      bytes.begin() + static_cast<std::ptrdiff_t>(p.pos() + need));
    return img;
}

Image decode_pgm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw DataError(DataErrorKind::bad_magic, "expected P5");
    return decode_pnm(bytes);
}

Image decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw DataError(DataErrorKind::bad_magic, "expected P6");
    return decode_pnm(bytes);
}

std::vector<std::uint8_t> encode_pgm(const Image& image) { return encode_with_magic(image, "P5", 1); }
std::vector<std::uint8_t> encode_ppm(const Image& image) { return encode_with_magic(image, "P6", 3); }

std::vector<std::uint8_t> encode_pnm(const Image& image) {
    return image.channels == 3 ? encode_ppm(image) : encode_pgm(image);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataErrorKind::missing_file, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(DataErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(DataErrorKind::io, "write failed for " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
    try {
        return decode_pnm(read_bytes(path));
    } catch (const DataError& e) {
        if (e.kind() == DataErrorKind::missing_file) throw;
        throw DataError(e.kind(), path.string() + ": " + e.what());
    }
}

void write_pnm(const std::filesystem::path& path, const Image& image) { write_bytes(path, encode_pnm(image)); }

Tensor image_to_tensor(const Image& image) {
    const std::size_t c = image.channels, h = image.height, w = image.width;
    Tensor t(Shape{1, c, h, w});
    auto d = t.data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                d[(ch * h + y) * w + x] = static_cast<float>(image.pixels[(y * w + x) * c + ch]) / 255.0f;
            }
        }
    }
    return t;
}

namespace {
std::uint8_t to_byte(float v) {
    const float clamped = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}
}  // namespace

Image tensor_to_image(const Tensor& tensor) {
    if (tensor.rank() != 4 || tensor.dim(0) != 1 || (tensor.dim(1) != 1 && tensor.dim(1) != 3)) {
        throw ShapeError("tensor_to_image expects 1x1xHxW or 1x3xHxW, got " + shape_str(tensor.shape()));
    }
    Image img;
    img.channels = tensor.dim(1);
    img.height = tensor.dim(2);
    img.width = tensor.dim(3);
    img.pixels.resize(img.channels * img.height * img.width);
    const auto d = tensor.data();
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t ch = 0; ch < img.channels; ++ch) {
                img.pixels[(y * img.width + x) * img.channels + ch] = to_byte(d[(ch * img.height + y) * img.width + x]);
            }
        }
    }
    return img;
}

Image heat_to_image(std::span<const float> values, std::size_t height, std::size_t width) {
    if (values.size() != height * width) throw ShapeError("heat_to_image: size mismatch");
    Image img{width, height, 1, std::vector<std::uint8_t>(values.size())};
    std::transform(values.begin(), values.end(), img.pixels.begin(), to_byte);
    return img;
}

}  // namespace mecam
