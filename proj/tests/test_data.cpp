#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "m2r/corpus.hpp"
#include "m2r/errors.hpp"

using namespace m2r;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("m2r_test_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double mean_abs_diff(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
    return s / static_cast<double>(a.pixels.size());
}

bool in_unit_range(const Image& img) {
    return std::all_of(img.pixels.begin(), img.pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

TEST(SynthClean, DeterministicInRangeAndSeedSensitive) {
    const Image a = synth_clean(42, 32, 40), b = synth_clean(42, 32, 40);
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_TRUE(in_unit_range(a));
    for (std::uint64_t s = 0; s < 100; ++s)
        EXPECT_GT(mean_abs_diff(synth_clean(2 * s, 32, 32), synth_clean(2 * s + 1, 32, 32)), 0.01) << "seed " << s;
    EXPECT_THROW(synth_clean(1, 15, 32), ContractError);
}

TEST(Degrade, NullParametersAreIdentity) {
    const Image clean = synth_clean(7, 32, 32);
    DegradeParams params;
    params.rain.count = {0, 0};
    params.snow.count = {0, 0};
    params.raindrop.count = {0, 0};
    params.haze.transmission = {1, 1};
    for (Degradation t : {Degradation::rain, Degradation::snow, Degradation::haze, Degradation::raindrop})
        EXPECT_EQ(degrade(clean, t, params, 9).pixels, clean.pixels) << to_string(t);
}

TEST(Degrade, FullHazeIsAirlight) {
    const Image clean = synth_clean(8, 32, 32);
    DegradeParams params;
    params.haze.transmission = {0, 0};
    params.haze.airlight = {0.8, 0.8};
    const Image hazy = degrade(clean, Degradation::haze, params, 3);
    for (float v : hazy.pixels) EXPECT_NEAR(v, 0.8f, 1e-6f);
}

TEST(Degrade, EveryTypeChangesTheImageAndStaysInRange) {
    const Image clean = synth_clean(9, 48, 48);
    const DegradeParams params;
    for (Degradation t : {Degradation::rain, Degradation::snow, Degradation::haze, Degradation::raindrop}) {
        const Image a = degrade(clean, t, params, 11), b = degrade(clean, t, params, 11);
        EXPECT_EQ(a.pixels, b.pixels) << to_string(t);
        EXPECT_TRUE(in_unit_range(a)) << to_string(t);
        EXPECT_GT(mean_abs_diff(a, clean), 1e-3) << to_string(t);
    }
    EXPECT_THROW(degrade(clean, Degradation::unknown, params, 1), ConfigError);
}

TEST(DegradeParams, RejectsInvertedRanges) {
    DegradeParams params;
    params.snow.opacity = {0.9, 0.2};
    EXPECT_THROW(params.validate(), ConfigError);
}

TEST(Manifest, LinesRoundTripExactly) {
    CorpusConfig config;
    config.train_per_type = 3;
    config.val_per_type = 2;
    config.types = {Degradation::rain, Degradation::snow, Degradation::haze, Degradation::raindrop};
    for (const auto& entry : plan_split(config, "train")) {
        const ManifestEntry back = parse_manifest_line(format_manifest_line(entry));
        EXPECT_EQ(back.id, entry.id);
        EXPECT_EQ(back.height, entry.height);
        EXPECT_EQ(back.width, entry.width);
        EXPECT_EQ(back.scene_seed, entry.scene_seed);
        EXPECT_EQ(back.degradation.seed, entry.degradation.seed);
        EXPECT_EQ(back.degradation.values, entry.degradation.values);
        EXPECT_EQ(realize(back).degraded.pixels, realize(entry).degraded.pixels);
    }
    EXPECT_THROW(parse_manifest_line("id=x type=rain"), FormatError);
    EXPECT_THROW(parse_manifest_line("id=x type=fog image_height=4 image_width=4 scene_seed=1 degrade_seed=2"),
                 FormatError);
}

TEST(Corpus, SplitsAreDisjointAndLabelled) {
    CorpusConfig config;
    config.train_per_type = 4;
    config.val_per_type = 2;
    const auto train = plan_split(config, "train"), val = plan_split(config, "val");
    EXPECT_EQ(train.size(), 12u);
    EXPECT_EQ(val.size(), 6u);
    for (const auto& a : train)
        for (const auto& b : val) EXPECT_NE(a.scene_seed, b.scene_seed);
    EXPECT_THROW(plan_split(config, "test"), ConfigError);
}

TEST(Corpus, WrittenFilesAreReproducibleAndReloadBitExactly) {
    CorpusConfig config;
    config.train_per_type = 2;
    config.val_per_type = 1;
    config.height = 32;
    config.width = 32;
    const fs::path a = scratch("a"), b = scratch("b");
    const auto counts = write_corpus(config, a.string());
    write_corpus(config, b.string());
    EXPECT_EQ(counts.at("rain"), 3u);
    EXPECT_EQ(counts.at("haze"), 3u);
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path twin = b / fs::relative(entry.path(), a);
        EXPECT_EQ(slurp(entry.path()), slurp(twin)) << entry.path();
    }
    const auto loaded = load_split((a / "val").string());
    const auto planned = plan_split(config, "val");
    ASSERT_EQ(loaded.size(), planned.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        const Sample fresh = realize(planned[i]);
        EXPECT_EQ(loaded[i].id, fresh.id);
        EXPECT_EQ(loaded[i].label, fresh.label);
        EXPECT_EQ(loaded[i].clean.pixels, fresh.clean.pixels);
        EXPECT_EQ(loaded[i].degraded.pixels, fresh.degraded.pixels);
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Images, PpmRoundTripAndErrors) {
    const fs::path dir = scratch("ppm");
    const Image img = quantize(synth_clean(3, 17, 23));
    write_ppm((dir / "x.ppm").string(), img);
    const Image back = read_ppm((dir / "x.ppm").string());
    EXPECT_EQ(back.height, 17u);
    EXPECT_EQ(back.width, 23u);
    EXPECT_EQ(back.pixels, img.pixels);
    std::ofstream((dir / "bad.ppm").string()) << "P3\n1 1\n255\n0 0 0\n";
    EXPECT_THROW(read_ppm((dir / "bad.ppm").string()), FormatError);
    EXPECT_THROW(read_ppm((dir / "missing.ppm").string()), FormatError);
    fs::remove_all(dir);
}

TEST(Images, ReflectPadThenCropIsIdentity) {
    const Image img = synth_clean(5, 18, 21);
    const Image padded = reflect_pad(img, 24, 24);
    EXPECT_EQ(padded.height, 24u);
    EXPECT_EQ(padded.width, 24u);
    EXPECT_EQ(padded.at(1, 18, 3), img.at(1, 16, 3));  // mirrored about the last row
    EXPECT_EQ(padded.at(2, 4, 21), img.at(2, 4, 19));
    EXPECT_EQ(crop(padded, 18, 21).pixels, img.pixels);
}

TEST(Images, TensorConversionRoundTrips) {
    const Image a = synth_clean(1, 16, 16), b = synth_clean(2, 16, 16);
    const std::vector<const Image*> both{&a, &b};
    const auto batch = stack_images<float>(both);
    EXPECT_EQ(batch.shape(), (Shape{2, 3, 16, 16}));
    EXPECT_EQ(image_from_tensor(batch, 1).pixels, b.pixels);
}

}  // namespace
