#include "mecam/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mecam/error.hpp"

namespace mecam {

namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'E', 'C', 'M'};
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw DataError(DataErrorKind::truncated, "checkpoint payload ends early");
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

int checked_int(std::uint32_t v, const char* what) {
    if (v > (1u << 20)) throw DataError(DataErrorKind::malformed, std::string("checkpoint field out of range: ") + what);
    return static_cast<int>(v);
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
    const auto& cfg = model.config();
    Writer payload;
    payload.u32(static_cast<std::uint32_t>(cfg.in_channels));
    payload.u32(static_cast<std::uint32_t>(cfg.num_classes));
    payload.u32(static_cast<std::uint32_t>(cfg.input_size));
    payload.u32(static_cast<std::uint32_t>(cfg.blocks_per_stage));
    payload.u32(static_cast<std::uint32_t>(cfg.stage_widths.size()));
    for (int w : cfg.stage_widths) payload.u32(static_cast<std::uint32_t>(w));
    payload.u32(static_cast<std::uint32_t>(cfg.exit_stages.size()));
    for (int e : cfg.exit_stages) payload.u32(static_cast<std::uint32_t>(e));

    const auto state = model.state();
    payload.u32(static_cast<std::uint32_t>(state.size()));
    for (const auto& [name, t] : state) {
        payload.u32(static_cast<std::uint32_t>(name.size()));
        payload.raw({reinterpret_cast<const std::uint8_t*>(name.data()), name.size()});
        payload.u8(kDtypeF32);
        payload.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) payload.u32(static_cast<std::uint32_t>(d));
        for (float v : t.data()) payload.f32(v);
    }

    Writer file;
    file.raw(kMagic);
    file.u32(kCheckpointVersion);
    file.raw(payload.bytes());
    file.u32(crc32_of(payload.bytes()));
    return std::move(file.bytes());
}

Model deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw DataError(DataErrorKind::bad_magic, "not a MECM checkpoint");
    }
    if (bytes.size() < 12) throw DataError(DataErrorKind::truncated, "checkpoint shorter than its header");
    Reader header(bytes.subspan(4, 4));
    const std::uint32_t version = header.u32();
    if (version != kCheckpointVersion) {
        throw DataError(DataErrorKind::unsupported_version, "checkpoint version " + std::to_string(version) +
                                                                 " (supported: " + std::to_string(kCheckpointVersion) + ")");
    }
    const auto payload = bytes.subspan(8, bytes.size() - 12);
    Reader crc_reader(bytes.subspan(bytes.size() - 4));
    if (crc_reader.u32() != crc32_of(payload)) {
        throw DataError(DataErrorKind::crc_mismatch, "checkpoint payload failed CRC check");
    }

    Reader r(payload);
    ModelConfig cfg;
    cfg.in_channels = checked_int(r.u32(), "in_channels");
    cfg.num_classes = checked_int(r.u32(), "num_classes");
    cfg.input_size = checked_int(r.u32(), "input_size");
    cfg.blocks_per_stage = checked_int(r.u32(), "blocks_per_stage");
    cfg.stage_widths.resize(checked_int(r.u32(), "stage count"));
    for (auto& w : cfg.stage_widths) w = checked_int(r.u32(), "stage width");
    cfg.exit_stages.resize(checked_int(r.u32(), "exit count"));
    for (auto& e : cfg.exit_stages) e = checked_int(r.u32(), "exit stage");
    try {
        cfg.validate();
    } catch (const UsageError& e) {
        throw DataError(DataErrorKind::malformed, std::string("checkpoint config invalid: ") + e.what());
    }

    Model model = build(cfg, 0);
    auto state = model.state();
    const std::uint32_t count = r.u32();
    if (count != state.size()) {
        throw DataError(DataErrorKind::malformed, "checkpoint holds " + std::to_string(count) + " tensors, model needs " +
                                                      std::to_string(state.size()));
    }
    for (auto& [name, t] : state) {
        const std::string got = r.str(r.u32());
        if (got != name) throw DataError(DataErrorKind::malformed, "expected tensor '" + name + "', found '" + got + "'");
        if (r.u8() != kDtypeF32) throw DataError(DataErrorKind::malformed, "unsupported dtype for " + name);
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u32();
        if (shape != t.shape()) {
            throw DataError(DataErrorKind::malformed,
                            name + ": shape " + shape_str(shape) + " does not match " + shape_str(t.shape()));
        }
        for (auto& v : t.data()) v = r.f32();
    }
    if (!r.done()) throw DataError(DataErrorKind::malformed, "trailing bytes after tensors");
    return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(DataErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(DataErrorKind::io, "write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataErrorKind::missing_file, "cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace mecam
