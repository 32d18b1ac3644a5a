#include <doctest.h>

#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "mecam/dataset.hpp"
#include "mecam/error.hpp"
#include "mecam/netpbm.hpp"
#include "mecam/rng.hpp"
#include "mecam/synth.hpp"

using namespace mecam;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

DataErrorKind decode_error(const std::vector<std::uint8_t>& b) {
    try {
        decode_pnm(b);
    } catch (const DataError& e) {
        return e.kind();
    }
    FAIL("decode accepted bad input");
    return DataErrorKind::io;
}

// SHA-256 over every file under `root`, visited in sorted path order, hashing
// the relative path followed by the file bytes.
std::string tree_digest(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
    }
    std::sort(files.begin(), files.end());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const auto& f : files) {
        const std::string name = f.generic_string();
        EVP_DigestUpdate(ctx, name.data(), name.size());
        const auto data = read_bytes(root / f);
        EVP_DigestUpdate(ctx, data.data(), data.size());
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char buf[3];
    for (unsigned i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("mecam_unit_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("netpbm decode") {
    std::vector<std::uint8_t> one = bytes_of("P5\n1 1\n255\n");
    one.push_back(0x80);
    const Image img = decode_pgm(one);
    CHECK(img.width == 1);
    CHECK(img.pixels == std::vector<std::uint8_t>{0x80});
    CHECK(image_to_tensor(img).item() == doctest::Approx(128.0 / 255.0));

    std::vector<std::uint8_t> commented = bytes_of("P5\n# made by hand\n1 # width\n1\n255\n");
    commented.push_back(0x80);
    CHECK(decode_pgm(commented) == img);

    CHECK(decode_error(bytes_of("P2\n1 1\n255\n0")) == DataErrorKind::bad_magic);
    CHECK(decode_error(bytes_of("P5\n1 1\n65535\n00")) == DataErrorKind::bad_maxval);
    CHECK(decode_error(bytes_of("P5\n2 2\n255\nab")) == DataErrorKind::truncated);
    CHECK(decode_error(bytes_of("P6\n1 1\n255\nab")) == DataErrorKind::truncated);
}

TEST_CASE("netpbm round trip") {
    SplitMix64 rng(1);
    for (std::size_t ch : {1u, 3u}) {
        Image img{7, 5, ch, {}};
        for (std::size_t i = 0; i < 7 * 5 * ch; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
        const auto enc = encode_pnm(img);
        CHECK(decode_pnm(enc) == img);
        CHECK(encode_pnm(decode_pnm(enc)) == enc);
        CHECK(tensor_to_image(image_to_tensor(img)) == img);
    }
    CHECK(heat_to_image(std::vector<float>{0.0f, 0.5f, 1.0f, 0.2f}, 2, 2).pixels ==
          std::vector<std::uint8_t>{0, 128, 255, 51});
}

TEST_CASE("manifest") {
    const std::string text = "path,label,split\na.pgm,0,train\nb.pgm,-,test\nc.pgm,1,calib\n";
    const auto rows = parse_manifest(text);
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].label == std::nullopt);
    CHECK(rows[2].split == Split::calib);
    CHECK(format_manifest(rows) == text);
    CHECK_THROWS_AS(parse_manifest("file,label,split\n"), DataError);
    CHECK_THROWS_AS(parse_manifest("path,label,split\na.pgm,0,train\na.pgm,1,test\n"), DataError);
    CHECK_THROWS_AS(parse_manifest("path,label,split\na.pgm,x,train\n"), DataError);
    CHECK_THROWS_AS(parse_manifest("path,label,split\na.pgm,0,val\n"), DataError);
}

TEST_CASE("load_dataset") {
    const auto root = scratch("load");
    fs::create_directories(root / "img");
    write_pnm(root / "img/white.pgm", Image{4, 4, 1, std::vector<std::uint8_t>(16, 255)});
    write_pnm(root / "img/const.pgm", Image{3, 3, 1, std::vector<std::uint8_t>(9, 51)});
    write_manifest(root / "m.csv", {{"img/white.pgm", 0, Split::train}, {"img/const.pgm", 1, Split::test}});

    LoadOptions o;
    o.input_size = 8;
    const Dataset d = load_dataset(root, "m.csv", o);
    REQUIRE(d.size() == 2);
    CHECK(d[0].pixels.shape() == Shape{1, 1, 8, 8});
    for (float v : d[0].pixels.data()) CHECK(v == 1.0f);
    for (float v : d[1].pixels.data()) CHECK(v == doctest::Approx(0.2));
    o.split = Split::test;
    CHECK(load_dataset(root, "m.csv", o).size() == 1);

    SUBCASE("label out of range") {
        write_manifest(root / "bad.csv", {{"img/white.pgm", 2, Split::train}});
        try {
            load_dataset(root, "bad.csv", LoadOptions{});
            FAIL("accepted label 2");
        } catch (const DataError& e) {
            CHECK(e.kind() == DataErrorKind::label_out_of_range);
        }
    }
    SUBCASE("missing file") {
        write_manifest(root / "gone.csv", {{"img/none.pgm", 0, Split::train}});
        try {
            load_dataset(root, "gone.csv", LoadOptions{});
            FAIL("accepted a missing file");
        } catch (const DataError& e) {
            CHECK(e.kind() == DataErrorKind::missing_file);
        }
    }
    SUBCASE("malformed image") {
        std::ofstream(root / "img/broken.pgm", std::ios::binary) << "P5\n4 4\n255\nxx";
        write_manifest(root / "broken.csv", {{"img/broken.pgm", 0, Split::train}});
        try {
            load_dataset(root, "broken.csv", LoadOptions{});
            FAIL("accepted a truncated image");
        } catch (const DataError& e) {
            CHECK(e.kind() == DataErrorKind::truncated);
        }
    }
    fs::remove_all(root);
}

TEST_CASE("resize keeps range and constancy") {
    SplitMix64 rng(2);
    std::vector<float> v(5 * 7);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    const Tensor big = resize_image(Tensor(Shape{1, 1, 5, 7}, v), 12, 9);
    for (float x : big.data()) CHECK((x >= 0.0f && x <= 1.0f));
    const Tensor flat = resize_image(Tensor(Shape{1, 1, 5, 7}, 0.3f), 3, 3);
    for (float x : flat.data()) CHECK(x == doctest::Approx(0.3f));
}

TEST_CASE("augment") {
    SplitMix64 rng(3);
    std::vector<float> v(2 * 3 * 4);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    const ImageSample s{"s", Tensor(Shape{1, 2, 3, 4}, v), 0};
    auto vals = [](const ImageSample& x) { return std::vector<float>(x.pixels.data().begin(), x.pixels.data().end()); };

    CHECK(vals(apply_augment(s, AugmentDraw{false, 1.0f})) == v);
    const Tensor twice = flip_horizontal(flip_horizontal(s.pixels));
    CHECK(std::vector<float>(twice.data().begin(), twice.data().end()) == v);
    CHECK(flip_horizontal(s.pixels).at(0) == v[3]);
    const Tensor bright = scale_brightness(Tensor(Shape{1, 1, 2, 2}, 1.0f), 1.1f);
    for (float x : bright.data()) CHECK(x == 1.0f);

    int flips = 0;
    for (int i = 0; i < 2000; ++i) {
        const AugmentDraw d = draw_augment(rng);
        flips += d.flip;
        CHECK((d.brightness >= 0.9f && d.brightness <= 1.1f));
    }
    CHECK(flips > 850);
    CHECK(flips < 1150);
}

TEST_CASE("synthetic generator") {
    const auto a = scratch("synth_a"), b = scratch("synth_b"), c = scratch("synth_c");
    SynthOptions o;
    o.n_per_class = 20;
    o.seed = 5;
    const SynthSummary s = synth_generate(a, o);
    synth_generate(b, o);
    CHECK(tree_digest(a) == tree_digest(b));
    o.seed = 6;
    synth_generate(c, o);
    CHECK(tree_digest(a) != tree_digest(c));

    CHECK(s.id_train == 28);
    CHECK(s.id_calib == 4);
    CHECK(s.id_test == 8);
    const auto rows = read_manifest(a / "id.csv");
    CHECK(rows.size() == 40);
    CHECK(std::count_if(rows.begin(), rows.end(), [](const ManifestRow& r) { return r.label == 0; }) == 20);
    std::set<std::string> paths;
    for (const auto& r : rows) paths.insert(r.path);
    CHECK(paths.size() == rows.size());
    for (const auto& fam : kOodFamilies) {
        const auto ood = read_manifest(a / ("ood_" + fam + ".csv"));
        CHECK_FALSE(ood.empty());
        for (const auto& r : ood) {
            CHECK_FALSE(r.label.has_value());
            CHECK(r.split == Split::test);
        }
    }
    for (const auto& r : rows) {
        const Image m = read_pnm(a / mask_path_for(r.path));
        const auto on = std::count(m.pixels.begin(), m.pixels.end(), 255);
        const double frac = static_cast<double>(on) / m.pixels.size();
        INFO(r.path);
        CHECK(frac >= 0.05);
        CHECK(frac <= 0.40);
    }

    CHECK_THROWS_AS(synth_generate(a, o), UsageError);  // non-empty without force
    o.force = true;
    CHECK_NOTHROW(synth_generate(a, o));
    o.n_per_class = 5;
    CHECK_THROWS_AS(synth_generate(scratch("synth_d"), o), UsageError);
    for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("split counts") {
    const SplitCounts s = split_counts(500);
    CHECK(s.train == 350);
    CHECK(s.calib == 50);
    CHECK(s.test == 100);
}
