#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "m2r/errors.hpp"
#include "m2r/losses.hpp"

using namespace m2r;

namespace {

// A routing state whose sparse weights are given directly as [1, N, 1, P].
RoutingState<double> state_from(std::size_t experts, std::size_t positions, const std::vector<double>& se) {
    RoutingState<double> s;
    s.Se = Tensor<double>({1, experts, 1, positions}, se);
    return s;
}

TEST(LossL1, ClosedForms) {
    const Tensor<double> a({2}, {1.0, 3.0}), b({2}, {2.0, 5.0});
    EXPECT_DOUBLE_EQ(loss_l1(a, a).item(), 0.0);
    EXPECT_DOUBLE_EQ(loss_l1(b, a).item(), 1.5);
    const Tensor<double> na({2}, {-1.0, -3.0}), nb({2}, {-2.0, -5.0});
    EXPECT_DOUBLE_EQ(loss_l1(nb, na).item(), 1.5);
    EXPECT_THROW(loss_l1(a, Tensor<double>({3})), DimensionError);
}

TEST(LossBalance, UniformUsageIsZero) {
    // 4 experts, 4 pixels, K=2: every expert chosen twice with equal weight.
    const std::vector<double> se{0.5, 0.5, 0.0, 0.0,  //
                                 0.5, 0.0, 0.5, 0.0,  //
                                 0.0, 0.5, 0.0, 0.5,  //
                                 0.0, 0.0, 0.5, 0.5};
    const std::vector<RoutingState<double>> diag{state_from(4, 4, se)};
    EXPECT_LE(loss_balance<double>(diag).item(), 1e-6);
}

TEST(LossBalance, TwoExpertDegenerateCaseIsTwo) {
    const std::size_t pixels = 10;
    std::vector<double> se(2 * pixels, 0.0);
    for (std::size_t p = 0; p < pixels; ++p) se[p] = 1.0;  // expert 0 takes everything
    const std::vector<RoutingState<double>> diag{state_from(2, pixels, se)};
    EXPECT_NEAR(loss_balance<double>(diag).item(), 2.0, 1e-3);
}

TEST(LossBalance, WeightTermIsScaleInvariant) {
    const Tensor<double> v({3}, {0.2, 1.1, 0.7});
    const double base = cv_squared(v, 0.0).item();
    EXPECT_NEAR(cv_squared(ops::mul_scalar(v, 7.5), 0.0).item(), base, 1e-12);
}

TEST(LossBalance, NonNegativeAndAveragedOverRouters) {
    const std::vector<double> skewed{0.9, 0.8, 0.1, 0.2, 0.0, 0.0};
    const std::vector<double> flat{0.5, 0.5, 0.5, 0.5, 0.0, 0.0};
    const auto a = state_from(3, 2, skewed), b = state_from(3, 2, flat);
    const double la = loss_balance<double>(std::vector<RoutingState<double>>{a}).item();
    const double lb = loss_balance<double>(std::vector<RoutingState<double>>{b}).item();
    EXPECT_GE(la, 0.0);
    EXPECT_GE(lb, 0.0);
    EXPECT_NEAR(loss_balance<double>(std::vector<RoutingState<double>>{a, b}).item(), 0.5 * (la + lb), 1e-12);
    EXPECT_THROW(loss_balance<double>(std::vector<RoutingState<double>>{}), ContractError);
}

TEST(LossBalance, CountTermCarriesNoGradient) {
    Tensor<double> se({1, 2, 1, 2}, {1.0, 1.0, 0.0, 0.0});
    se.set_requires_grad(true);
    RoutingState<double> s;
    s.Se = se;
    Tape tape;
    TapeScope scope(tape);
    Tensor<double> loss = loss_balance<double>(std::vector<RoutingState<double>>{s});
    tape.backward(loss);
    // CV^2(w) = (w0 - w1)^2 / (w0 + w1)^2 at w = (2, 0) has gradient (0, -2);
    // the count term would add nothing even if it were differentiable.
    EXPECT_NEAR(loss.item(), 2.0, 1e-9);
    EXPECT_NEAR(se.grad()[0], 0.0, 1e-9);
    EXPECT_NEAR(se.grad()[1], 0.0, 1e-9);
    EXPECT_NEAR(se.grad()[2], -2.0, 1e-9);
    EXPECT_NEAR(se.grad()[3], -2.0, 1e-9);
}

TEST(LossTotal, MixesWithLambda) {
    const auto l1 = Tensor<double>::scalar(1.5), balance = Tensor<double>::scalar(2.0);
    EXPECT_DOUBLE_EQ(loss_total(l1, balance, 0.0).item(), 1.5);
    EXPECT_NEAR(loss_total(l1, balance, 0.01).item(), 1.52, 1e-12);
    EXPECT_DOUBLE_EQ(loss_total(l1, Tensor<double>(), 0.3).item(), 1.5);
    EXPECT_THROW(loss_total(l1, balance, -0.1), ConfigError);
    double previous = -1.0;
    for (double lambda : {0.0, 0.01, 0.1, 1.0}) {
        const double v = loss_total(l1, balance, lambda).item();
        EXPECT_GE(v, previous);
        previous = v;
    }
}

TEST(LossTotal, GradientIsLinearInLambda) {
    Rng rng(31);
    auto x = m2r::testing::random_tensor({5}, rng, 0.1, 1.0);
    const auto clean = m2r::testing::random_tensor({5}, rng, 0.0, 1.0, false);
    const auto grad_of = [&](double lambda) {
        x.zero_grad();
        Tape tape;
        TapeScope scope(tape);
        Tensor<double> loss = loss_total(loss_l1(x, clean), cv_squared(x, 1e-10), lambda);
        tape.backward(loss);
        return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    const auto g0 = grad_of(0.0), g1 = grad_of(1.0), g = grad_of(0.37);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], g0[i] + 0.37 * (g1[i] - g0[i]), 1e-12);
}

TEST(CrossEntropy, MatchesLogSoftmax) {
    const Tensor<double> logits({1, 3}, {1.0, 2.0, 0.5});
    const std::vector<std::size_t> label{1};
    const double norm = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
    EXPECT_NEAR(cross_entropy(logits, label).item(), std::log(norm) - 2.0, 1e-12);
}

TEST(UsageHistogram, SumsCountsOverRouters) {
    const auto a = state_from(2, 3, {0.4, 1.0, 0.0, 0.6, 0.0, 1.0});
    const auto hist = usage_histogram<double>(std::vector<RoutingState<double>>{a, a});
    EXPECT_EQ(hist, (std::vector<double>{4.0, 4.0}));
}

}  // namespace
