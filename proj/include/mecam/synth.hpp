#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mecam/rng.hpp"

namespace mecam {

/// Synthetic stand-in for a localized-object ID set and three OOD families.
///
/// ID class 0 is a filled disk, class 1 a filled square, both on a noisy
/// background. OOD families: pure noise, horizontal stripes, rings. Every
/// sample ships a binary object mask under the sibling `masks/` directory.
///
/// Layout under the output directory:
///   id/images/*.pgm, id/masks/*.pgm, ood/<family>/images|masks/*.pgm
///   id.csv (all splits), id_train.csv, id_calib.csv, id_test.csv,
///   ood_noise.csv, ood_stripes.csv, ood_rings.csv
struct SynthOptions {
    std::uint64_t seed = 42;
    int n_per_class = 500;
    int image_size = 32;
    bool force = false;  // allow writing into a non-empty directory
};

struct SynthSummary {
    std::size_t id_train = 0, id_calib = 0, id_test = 0;
    std::size_t ood_per_family = 0;
    std::vector<std::string> manifests;
};

inline constexpr double kSynthNoiseSigma = 0.05;
inline const std::vector<std::string> kOodFamilies{"noise", "stripes", "rings"};

/// One rendered sample: intensities in [0, 1] and a 0/1 object mask.
struct SynthSample {
    std::vector<float> pixels;
    std::vector<std::uint8_t> mask;
};

SynthSample render_id(int cls, int size, SplitMix64& rng);
SynthSample render_ood(const std::string& family, int size, SplitMix64& rng);

/// Per-class split sizes: 70 / 10 / 20 percent, remainder to test.
struct SplitCounts {
    int train, calib, test;
};
SplitCounts split_counts(int n_per_class);

SynthSummary synth_generate(const std::filesystem::path& out_dir, const SynthOptions& options);

}  // namespace mecam
