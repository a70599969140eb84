#include <gtest/gtest.h>

#include "gradient_cases.hpp"

namespace {

const std::vector<m2r::testing::GradientCase>& cases() {
    static const auto all = m2r::testing::gradient_cases();
    return all;
}

class Gradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(Gradients, MatchFiniteDifferences) {
    const auto& c = cases()[GetParam()];
    const auto result = c.run();
    EXPECT_GT(result.entries, 0u);
    EXPECT_LE(result.rel_error, c.tolerance) << c.name << ", worst input: " << result.worst;
}

INSTANTIATE_TEST_SUITE_P(All, Gradients, ::testing::Range<std::size_t>(0, cases().size()),
                         [](const auto& info) { return cases()[info.param].name; });

}  // namespace
