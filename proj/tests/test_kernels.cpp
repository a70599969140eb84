#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "m2r/simd/kernels.hpp"

using namespace m2r::simd;

namespace {

template <typename T>
std::vector<T> random_vector(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<T> v(n);
    for (T& x : v) x = static_cast<T>(dist(rng));
    return v;
}

template <typename T>
T tolerance() {
    return std::is_same_v<T, float> ? T(2e-5) : T(1e-12);
}

template <typename T>
void expect_close(const std::vector<T>& a, const std::vector<T>& b, double scale) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tolerance<T>() * scale) << "index " << i;
}

template <typename T>
class KernelEquivalence : public ::testing::Test {
protected:
    void SetUp() override {
        vec = avx2_kernels<T>();
        if (vec == nullptr) GTEST_SKIP() << "AVX2/FMA variant unavailable on this machine";
    }
    const KernelTable<T>& ref = scalar_kernels<T>();
    const KernelTable<T>* vec = nullptr;
    std::mt19937_64 rng{2024};
};

using Types = ::testing::Types<float, double>;
TYPED_TEST_SUITE(KernelEquivalence, Types);

const std::size_t kLengths[] = {0, 1, 3, 7, 8, 9, 15, 16, 17, 31, 33, 64, 100, 257, 1031};

TYPED_TEST(KernelEquivalence, ReductionsMatchReference) {
    using T = TypeParam;
    for (std::size_t n : kLengths) {
        const auto x = random_vector<T>(n, this->rng), y = random_vector<T>(n, this->rng);
        const double scale = std::sqrt(static_cast<double>(n) + 1.0);
        EXPECT_NEAR(this->ref.dot(x.data(), y.data(), n), this->vec->dot(x.data(), y.data(), n),
                    tolerance<T>() * scale)
            << "n=" << n;
        EXPECT_NEAR(this->ref.sum(x.data(), n), this->vec->sum(x.data(), n), tolerance<T>() * scale) << "n=" << n;
    }
}

TYPED_TEST(KernelEquivalence, ElementwiseMatchReference) {
    using T = TypeParam;
    for (std::size_t n : kLengths) {
        const auto x = random_vector<T>(n, this->rng), y = random_vector<T>(n, this->rng);
        const auto base = random_vector<T>(n, this->rng);
        const T a = static_cast<T>(0.37);

        auto r = base, v = base;
        this->ref.axpy(a, x.data(), r.data(), n);
        this->vec->axpy(a, x.data(), v.data(), n);
        expect_close(r, v, 1.0);

        r = base, v = base;
        this->ref.mul_acc(x.data(), y.data(), r.data(), n);
        this->vec->mul_acc(x.data(), y.data(), v.data(), n);
        expect_close(r, v, 1.0);

        r = base, v = base;
        this->ref.decay_acc(x.data(), y.data(), r.data(), n);
        this->vec->decay_acc(x.data(), y.data(), v.data(), n);
        expect_close(r, v, 1.0);

        std::vector<T> rs(n), vs(n);
        this->ref.scale(a, x.data(), rs.data(), n);
        this->vec->scale(a, x.data(), vs.data(), n);
        expect_close(rs, vs, 1.0);
    }
}

TYPED_TEST(KernelEquivalence, GemmMatchesReferenceForBothLayouts) {
    using T = TypeParam;
    const std::size_t dims[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 16, 9}, {5, 17, 33}, {13, 40, 21}, {32, 64, 48}};
    for (const auto& d : dims) {
        const std::size_t m = d[0], n = d[1], k = d[2];
        const auto a = random_vector<T>(m * k, this->rng);
        const auto b = random_vector<T>(k * n, this->rng);
        const auto c0 = random_vector<T>(m * n, this->rng);
        const double scale = std::sqrt(static_cast<double>(k));
        for (bool transposed : {false, true}) {
            const std::size_t rs = transposed ? 1 : k, cs = transposed ? m : 1;
            auto r = c0, v = c0;
            this->ref.gemm(m, n, k, a.data(), rs, cs, b.data(), n, r.data(), n);
            this->vec->gemm(m, n, k, a.data(), rs, cs, b.data(), n, v.data(), n);
            expect_close(r, v, scale);
        }
        const auto bt = random_vector<T>(n * k, this->rng);
        auto r = c0, v = c0;
        this->ref.gemm_nt(m, n, k, a.data(), k, bt.data(), k, r.data(), n);
        this->vec->gemm_nt(m, n, k, a.data(), k, bt.data(), k, v.data(), n);
        expect_close(r, v, scale);
    }
}

TEST(KernelReference, GemmAgainstTripleLoop) {
    std::mt19937_64 rng(5);
    const std::size_t m = 6, n = 7, k = 5;
    const auto a = random_vector<double>(m * k, rng), b = random_vector<double>(k * n, rng);
    std::vector<double> c(m * n, 0.0), expect(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) expect[i * n + j] += a[i * k + p] * b[p * n + j];
    scalar_kernels<double>().gemm(m, n, k, a.data(), k, 1, b.data(), n, c.data(), n);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], expect[i], 1e-14);
}

TEST(KernelDispatch, ActiveTableIsOneOfTheVariants) {
    const auto& active_table = active<float>();
    const bool is_scalar = &active_table == &scalar_kernels<float>();
    const bool is_avx2 = avx2_kernels<float>() != nullptr && &active_table == avx2_kernels<float>();
    EXPECT_TRUE(is_scalar || is_avx2) << active_table.name;
    if (!cpu_has_avx2_fma()) EXPECT_TRUE(is_scalar);
}

}  // namespace
