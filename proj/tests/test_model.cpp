#include <gtest/gtest.h>

#include <algorithm>

#include "gradcheck.hpp"
#include "m2r/errors.hpp"
#include "m2r/losses.hpp"
#include "m2r/model.hpp"
#include "tiny_model.hpp"

using namespace m2r;

namespace {

PriorBatch<float> uniform_prior(std::size_t batch, const ModelConfig& c) {
    std::vector<DegradationPrior> priors(batch);
    for (auto& p : priors) {
        p.class_probs.assign(c.classes, 1.0 / static_cast<double>(c.classes));
        p.features.assign(c.prior_width, 0.1);
    }
    return stack_priors<float>(priors);
}

Tensor<float> random_images(std::size_t batch, std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<float> t({batch, 3, h, w});
    ops::fill_uniform(t, 0.5f, rng);
    for (float& v : t.mutable_data()) v += 0.5f;
    return t;
}

TEST(Model, EveryVariantKeepsShapeAndStartsAsIdentity) {
    for (Variant v : {Variant::full, Variant::no_dgf, Variant::no_dder, Variant::dder_only}) {
        ModelConfig config = m2r::testing::tiny_config();
        config.variant = v;
        const Model<float> model = build_variant<float>(config, 1);
        const auto images = random_images(2, 16, 24, 3);
        Rng rng(0);
        const auto out = model.forward(images, uniform_prior(2, config), Mode::train, rng);
        EXPECT_EQ(out.restored.shape(), images.shape()) << to_string(v);
        EXPECT_TRUE(std::equal(out.restored.data().begin(), out.restored.data().end(), images.data().begin()))
            << to_string(v);
        EXPECT_EQ(out.diagnostics.size(), v == Variant::no_dder ? 0u : config.levels()) << to_string(v);
    }
}

TEST(Model, InferenceIsDeterministic) {
    const ModelConfig config = m2r::testing::tiny_config();
    Model<float> model(config, 2);
    m2r::testing::randomize_head(model, 5);
    const auto images = random_images(2, 16, 16, 4);
    Rng a(1), b(99);
    const auto ya = model.forward(images, uniform_prior(2, config), Mode::infer, a);
    const auto yb = model.forward(images, uniform_prior(2, config), Mode::infer, b);
    EXPECT_TRUE(std::equal(ya.restored.data().begin(), ya.restored.data().end(), yb.restored.data().begin()));
    EXPECT_FALSE(std::equal(ya.restored.data().begin(), ya.restored.data().end(), images.data().begin()));
}

TEST(Model, RejectsIndivisibleSizesAndBadPriors) {
    const ModelConfig config = m2r::testing::tiny_config();
    const Model<float> model(config, 3);
    Rng rng(0);
    try {
        model.forward(random_images(1, 18, 16, 1), uniform_prior(1, config), Mode::infer, rng);
        FAIL() << "expected a contract error";
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("multiple of 4"), std::string::npos) << e.what();
    }
    EXPECT_THROW(model.forward(random_images(2, 16, 16, 1), uniform_prior(1, config), Mode::infer, rng),
                 DimensionError);
}

TEST(Model, VariantNamesAndValidation) {
    EXPECT_EQ(variant_from_string("no_dgf"), Variant::no_dgf);
    EXPECT_EQ(to_string(Variant::dder_only), "dder_only");
    EXPECT_THROW(variant_from_string("no_mcdb"), ConfigError);
    ModelConfig bad = m2r::testing::tiny_config();
    bad.top_k = bad.experts + 1;
    EXPECT_THROW(build_variant<float>(bad, 1), ConfigError);
    bad = m2r::testing::tiny_config();
    bad.lambda = -1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Model, ParameterAudit) {
    const auto count = [](Variant v) {
        ModelConfig config;
        config.variant = v;
        return count_parameters(build_variant<float>(config, 1).parameters());
    };
    const std::size_t full = count(Variant::full);
    EXPECT_GT(full, count(Variant::dder_only));
    EXPECT_GT(full, count(Variant::no_dgf));
    const auto params = build_variant<float>(ModelConfig{}, 1).parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = i + 1; j < params.size(); ++j) {
            EXPECT_NE(params[i].name, params[j].name);
            EXPECT_FALSE(params[i].tensor.same_storage(params[j].tensor)) << params[i].name;
        }
}

TEST(Model, NoDgfBottleneckAveragesBranches) {
    ModelConfig config = m2r::testing::tiny_config();
    config.variant = Variant::no_dgf;
    const Model<double> model(config, 4);
    Rng rng(1);
    auto x = m2r::testing::random_tensor({1, config.channels.back(), 4, 4}, rng, -1, 1, false);
    auto prior = m2r::testing::random_tensor({1, config.prior_width}, rng, -1, 1, false);
    const auto parts = model.bottleneck->forward_parts(x, prior);
    for (std::size_t i = 0; i < parts.out.numel(); ++i)
        EXPECT_NEAR(parts.out.data()[i], 0.5 * parts.cnn.data()[i] + 0.5 * parts.mamba.data()[i], 1e-14);
}

TEST(Model, RefinementHookIsApplied) {
    const ModelConfig config = m2r::testing::tiny_config();
    Model<float> model(config, 5);
    m2r::testing::randomize_head(model, 6);
    std::vector<std::size_t> seen;
    model.refinement_hook = [&](const Tensor<float>& x, std::size_t level) {
        seen.push_back(level);
        return x;
    };
    Rng rng(0);
    model.forward(random_images(1, 16, 16, 2), uniform_prior(1, config), Mode::infer, rng);
    EXPECT_EQ(seen, (std::vector<std::size_t>{1, 0}));
}

}  // namespace
