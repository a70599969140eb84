#pragma once

// Synthetic paired corpus: procedural clean scenes and four parametric
// weather degradations, written to disk as PPM pairs with a text manifest
// from which every sample can be regenerated bit-exactly.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "m2r/image.hpp"
#include "m2r/ops.hpp"
#include "m2r/prompt_prior.hpp"

namespace m2r {

struct Range {
    double lo = 0.0, hi = 0.0;
    double sample(Rng& rng) const;
};

// Parameter ranges per degradation type; each sample draws concrete values.
struct DegradeParams {
    struct Rain {
        Range count{10, 22};         // streaks
        Range length{8, 16};         // pixels
        Range angle{-20, 20};        // degrees from vertical
        Range intensity{0.35, 0.7};  // peak added brightness
        Range width{0.5, 0.9};       // Gaussian profile sigma, pixels
    } rain;
    struct Snow {
        Range count{25, 60};  // flakes
        Range radius{0.7, 2.2};
        Range opacity{0.6, 0.95};
    } snow;
    struct Haze {
        Range transmission{0.35, 0.7};
        Range airlight{0.7, 0.95};
    } haze;
    struct Raindrop {
        Range count{3, 7};
        Range radius{4, 9};
        Range blur{1.0, 2.5};  // Gaussian sigma inside drops
        Range lift{0.04, 0.12};
    } raindrop;

    // ConfigError when a range is inverted or leaves its domain.
    void validate() const;
};

// Concrete degradation of one sample: drawn values plus the seed that
// places streaks, flakes or drops.
struct DegradeSpec {
    Degradation type = Degradation::rain;
    std::map<std::string, double> values;
    std::uint64_t seed = 0;
};

// Procedural scene: vertical sky gradient, random rectangles and disks and
// sinusoidal texture with a little noise. Requires height, width >= 16.
Image synth_clean(std::uint64_t seed, std::size_t height, std::size_t width);

// Draws the concrete values for `type` from `params` using `seed`.
DegradeSpec sample_degradation(Degradation type, const DegradeParams& params, std::uint64_t seed);
Image apply_degradation(const Image& clean, const DegradeSpec& spec);

// sample_degradation followed by apply_degradation.
Image degrade(const Image& clean, Degradation type, const DegradeParams& params, std::uint64_t seed);

// Deterministic seed mixing (splitmix64 chain).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

struct CorpusConfig {
    std::vector<Degradation> types{Degradation::rain, Degradation::snow, Degradation::haze};
    std::size_t train_per_type = 200;
    std::size_t val_per_type = 40;
    std::size_t height = 64, width = 64;
    std::uint64_t seed = 1;
    DegradeParams params;

    void validate() const;
};

struct ManifestEntry {
    std::string id;
    std::size_t height = 0, width = 0;
    std::uint64_t scene_seed = 0;
    DegradeSpec degradation;
};

struct Sample {
    std::string id;
    Image clean, degraded;
    std::size_t label = 0;
    std::uint64_t seed = 0;
};

// Entries of one split ("train" or "val"), type-major.
std::vector<ManifestEntry> plan_split(const CorpusConfig& config, const std::string& split);

// Renders an entry. Images are quantized to 8 bits, so a rendered sample
// equals what reading its PPM files back yields.
Sample realize(const ManifestEntry& entry);

// One line per entry: space-separated key=value pairs.
std::string format_manifest_line(const ManifestEntry& entry);
ManifestEntry parse_manifest_line(const std::string& line);  // FormatError on bad lines

// Writes <dir>/train and <dir>/val, each with manifest.txt and
// <id>_clean.ppm / <id>_degraded.ppm. Returns sample counts per type name,
// summed over splits.
std::map<std::string, std::size_t> write_corpus(const CorpusConfig& config, const std::string& dir);

std::vector<ManifestEntry> read_manifest(const std::string& split_dir);
// Loads images from disk in manifest order.
std::vector<Sample> load_split(const std::string& split_dir);

}  // namespace m2r
