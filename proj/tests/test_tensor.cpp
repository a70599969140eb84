#include <gtest/gtest.h>

#include "m2r/errors.hpp"
#include "m2r/ops.hpp"

using namespace m2r;

namespace {

TEST(Tensor, ShapeAndStorage) {
    Tensor<float> t({2, 3});
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(to_string(t.shape()), "[2,3]");
    Tensor<float> alias = t;
    alias.mutable_data()[4] = 7.0f;
    EXPECT_EQ(t.data()[4], 7.0f);
    EXPECT_TRUE(alias.same_storage(t));
    const Tensor<float> copy = t.detach();
    EXPECT_FALSE(copy.same_storage(t));
    EXPECT_EQ(copy.data()[4], 7.0f);
    EXPECT_THROW(Tensor<float>({2, 2}, {1.0f, 2.0f}), DimensionError);
}

TEST(Tape, AccumulatesGradientsOfSharedInputs) {
    Tensor<double> x({3}, {1.0, 2.0, 3.0});
    x.set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        // sum(x * x + x) has gradient 2x + 1.
        Tensor<double> loss = ops::sum(ops::add(ops::mul(x, x), x));
        EXPECT_DOUBLE_EQ(loss.item(), 20.0);
        tape.backward(loss);
    }
    EXPECT_EQ(tape.size(), 0u);
    EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 5.0);
    EXPECT_DOUBLE_EQ(x.grad()[2], 7.0);
}

TEST(Tape, NothingIsRecordedWithoutScopeOrUnderNoGrad) {
    Tensor<double> x({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    {
        NoGradScope off;
        ops::mul(x, x);
        EXPECT_EQ(Tape::current(), nullptr);
    }
    EXPECT_EQ(tape.size(), 0u);
    ops::mul(x, x);
    EXPECT_EQ(tape.size(), 1u);
    Tensor<double> constant({2}, {1.0, 1.0});
    ops::mul(constant, constant);
    EXPECT_EQ(tape.size(), 1u);
}

TEST(Tape, ZeroGradResets) {
    Tensor<float> x({2}, {1.0f, 2.0f});
    x.set_requires_grad(true);
    for (int round = 0; round < 2; ++round) {
        x.zero_grad();
        Tape tape;
        TapeScope scope(tape);
        Tensor<float> loss = ops::sum(ops::mul_scalar(x, 3.0f));
        tape.backward(loss);
        EXPECT_FLOAT_EQ(x.grad()[0], 3.0f);
    }
}

}  // namespace
