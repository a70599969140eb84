#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "m2r/errors.hpp"
#include "m2r/metrics.hpp"
#include "oracles.hpp"

using namespace m2r;

namespace {

Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    Image img(h, w);
    for (float& v : img.pixels) v = dist(rng);
    return img;
}

TEST(Psnr, ClosedForms) {
    const std::vector<float> a(100, 0.5f);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    std::vector<float> b(100, 0.6f);  // MSE = 0.01
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
    std::vector<float> c(100, 128.0f), d(100, 129.0f);
    EXPECT_NEAR(psnr(c, d, 255.0), 20.0 * std::log10(255.0), 1e-6);
    EXPECT_THROW(psnr(std::vector<float>(3), std::vector<float>(4)), DimensionError);
}

TEST(Psnr, DecreasesWithNoiseAmplitude) {
    std::mt19937_64 rng(1);
    const Image clean = random_image(32, 32, rng);
    std::normal_distribution<float> unit(0.0f, 1.0f);
    Image noise(32, 32);
    for (float& v : noise.pixels) v = unit(rng);
    double previous = INFINITY;
    for (float amplitude : {0.01f, 0.02f, 0.05f, 0.1f, 0.2f}) {
        Image noisy = clean;
        for (std::size_t i = 0; i < noisy.pixels.size(); ++i) noisy.pixels[i] += amplitude * noise.pixels[i];
        const double value = psnr(noisy, clean);
        EXPECT_LT(value, previous);
        previous = value;
    }
}

TEST(Ssim, IdentityIsExactlyOne) {
    std::mt19937_64 rng(2);
    const Image a = random_image(24, 20, rng);
    EXPECT_EQ(ssim(a, a), 1.0);
}

TEST(Ssim, SymmetricAndAntiCorrelatedCheckerboard) {
    std::mt19937_64 rng(3);
    const Image a = random_image(24, 24, rng), b = random_image(24, 24, rng);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-9);

    Image board(16, 16), inverse(16, 16);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                board.at(c, y, x) = static_cast<float>((x + y) % 2);
                inverse.at(c, y, x) = 1.0f - board.at(c, y, x);
            }
    EXPECT_LT(ssim(board, inverse), 0.1);
}

TEST(Ssim, RejectsTinyImages) {
    const Image small(7, 7);
    EXPECT_THROW(ssim(small, small), ContractError);
}

TEST(Silhouette, SeparatedClustersScoreHigh) {
    const std::vector<std::vector<double>> points{{0.0}, {0.1}, {10.0}, {10.1}};
    const std::vector<std::size_t> labels{0, 0, 1, 1};
    EXPECT_GT(silhouette(points, labels), 0.95);
}

TEST(Silhouette, IdenticalPointsScoreZero) {
    const std::vector<std::vector<double>> points(4, std::vector<double>{1.0, 2.0});
    EXPECT_EQ(silhouette(points, {0, 0, 1, 1}), 0.0);
}

TEST(Silhouette, MatchesBruteForceAndIsPermutationInvariant) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<double>> points(10, std::vector<double>(3));
        std::vector<std::size_t> labels(10);
        for (std::size_t i = 0; i < 10; ++i) {
            labels[i] = i % 3;
            for (double& v : points[i]) v = dist(rng) + static_cast<double>(labels[i]);
        }
        const double value = silhouette(points, labels);
        EXPECT_NEAR(value, m2r::testing::brute_silhouette(points, labels), 1e-9);
        EXPECT_GE(value, -1.0);
        EXPECT_LE(value, 1.0);
        std::vector<std::size_t> order{3, 1, 4, 0, 9, 2, 6, 5, 8, 7};
        std::vector<std::vector<double>> p2;
        std::vector<std::size_t> l2;
        for (auto i : order) {
            p2.push_back(points[i]);
            l2.push_back(labels[i]);
        }
        EXPECT_NEAR(silhouette(p2, l2), value, 1e-12);
    }
}

TEST(Silhouette, RejectsDegenerateClusterings) {
    const std::vector<std::vector<double>> points{{0.0}, {1.0}, {2.0}};
    EXPECT_THROW(silhouette(points, {0, 0, 0}), ContractError);
    EXPECT_THROW(silhouette(points, {0, 0, 1}), ContractError);
}

TEST(Cosine, BasicCases) {
    const std::vector<double> a{1, 0}, b{0, 2}, c{3, 0}, z{0, 0};
    EXPECT_NEAR(cosine_similarity(a, b), 0.0, 1e-15);
    EXPECT_NEAR(cosine_similarity(a, c), 1.0, 1e-15);
    EXPECT_EQ(cosine_similarity(a, z), 0.0);
}

}  // namespace
