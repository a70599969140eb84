// Built with -mavx2 -mfma. Nothing in here may run before the dispatcher has
// confirmed CPU support.

#include "m2r/simd/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace m2r::simd {
namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

float dot_f(const float* x, const float* y, std::size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8) acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    float acc = hsum(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double dot_d(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_f(float a, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_d(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void mul_acc_f(const float* x, const float* y, float* z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(z + i, _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), _mm256_loadu_ps(z + i)));
    for (; i < n; ++i) z[i] += x[i] * y[i];
}

void mul_acc_d(const double* x, const double* y, double* z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), _mm256_loadu_pd(z + i)));
    for (; i < n; ++i) z[i] += x[i] * y[i];
}

void decay_acc_f(const float* a, const float* x, float* h, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(h + i, _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(h + i), _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) h[i] = a[i] * h[i] + x[i];
}

void decay_acc_d(const double* a, const double* x, double* h, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(h + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(h + i), _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) h[i] = a[i] * h[i] + x[i];
}

float sum_f(const float* x, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double sum_d(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void scale_f(float a, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = a * x[i];
}

void scale_d(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = a * x[i];
}

// Register-blocked update of R rows of C by two vector widths of columns.
// Each C entry accumulates over p in order, like the reference.
template <int R, typename V>
struct Lanes;

template <int R>
struct Lanes<R, float> {
    static constexpr std::size_t kWidth = 8;
    static void block(std::size_t k, const float* a, std::size_t a_rs, std::size_t a_cs, const float* b,
                      std::size_t ldb, float* c, std::size_t ldc) {
        __m256 acc0[R], acc1[R];
        for (int r = 0; r < R; ++r) {
            acc0[r] = _mm256_loadu_ps(c + r * ldc);
            acc1[r] = _mm256_loadu_ps(c + r * ldc + 8);
        }
        for (std::size_t p = 0; p < k; ++p) {
            const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
            const __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
            for (int r = 0; r < R; ++r) {
                const __m256 av = _mm256_broadcast_ss(a + r * a_rs + p * a_cs);
                acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
                acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
            }
        }
        for (int r = 0; r < R; ++r) {
            _mm256_storeu_ps(c + r * ldc, acc0[r]);
            _mm256_storeu_ps(c + r * ldc + 8, acc1[r]);
        }
    }
};

template <int R>
struct Lanes<R, double> {
    static constexpr std::size_t kWidth = 4;
    static void block(std::size_t k, const double* a, std::size_t a_rs, std::size_t a_cs, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc) {
        __m256d acc0[R], acc1[R];
        for (int r = 0; r < R; ++r) {
            acc0[r] = _mm256_loadu_pd(c + r * ldc);
            acc1[r] = _mm256_loadu_pd(c + r * ldc + 4);
        }
        for (std::size_t p = 0; p < k; ++p) {
            const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
            const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
            for (int r = 0; r < R; ++r) {
                const __m256d av = _mm256_broadcast_sd(a + r * a_rs + p * a_cs);
                acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
                acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
            }
        }
        for (int r = 0; r < R; ++r) {
            _mm256_storeu_pd(c + r * ldc, acc0[r]);
            _mm256_storeu_pd(c + r * ldc + 4, acc1[r]);
        }
    }
};

template <typename T, int R>
void gemm_rows(std::size_t n, std::size_t k, const T* a, std::size_t a_rs, std::size_t a_cs, const T* b,
               std::size_t ldb, T* c, std::size_t ldc) {
    constexpr std::size_t step = 2 * Lanes<R, T>::kWidth;
    std::size_t j = 0;
    for (; j + step <= n; j += step) Lanes<R, T>::block(k, a, a_rs, a_cs, b + j, ldb, c + j, ldc);
    for (int r = 0; r < R; ++r)
        for (std::size_t jj = j; jj < n; ++jj) {
            T acc = c[r * ldc + jj];
            for (std::size_t p = 0; p < k; ++p) acc += a[r * a_rs + p * a_cs] * b[p * ldb + jj];
            c[r * ldc + jj] = acc;
        }
}

template <typename T>
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_rs, std::size_t a_cs, const T* b,
               std::size_t ldb, T* c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) gemm_rows<T, 4>(n, k, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc);
    for (; i < m; ++i) gemm_rows<T, 1>(n, k, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc);
}

// Two rows of A against four rows of B per pass over k.
void gemm_nt_f(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
               std::size_t ldb, float* c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 2 <= m; i += 2) {
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            __m256 acc[2][4];
            for (auto& row : acc)
                for (auto& v : row) v = _mm256_setzero_ps();
            std::size_t p = 0;
            for (; p + 8 <= k; p += 8) {
                const __m256 a0 = _mm256_loadu_ps(a + i * lda + p);
                const __m256 a1 = _mm256_loadu_ps(a + (i + 1) * lda + p);
                for (int q = 0; q < 4; ++q) {
                    const __m256 bv = _mm256_loadu_ps(b + (j + q) * ldb + p);
                    acc[0][q] = _mm256_fmadd_ps(a0, bv, acc[0][q]);
                    acc[1][q] = _mm256_fmadd_ps(a1, bv, acc[1][q]);
                }
            }
            for (int r = 0; r < 2; ++r)
                for (int q = 0; q < 4; ++q) {
                    float s = hsum(acc[r][q]);
                    for (std::size_t pp = p; pp < k; ++pp) s += a[(i + r) * lda + pp] * b[(j + q) * ldb + pp];
                    c[(i + r) * ldc + j + q] += s;
                }
        }
        for (; j < n; ++j) {
            c[i * ldc + j] += dot_f(a + i * lda, b + j * ldb, k);
            c[(i + 1) * ldc + j] += dot_f(a + (i + 1) * lda, b + j * ldb, k);
        }
    }
    for (; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot_f(a + i * lda, b + j * ldb, k);
}

void gemm_nt_d(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
               std::size_t ldb, double* c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 2 <= m; i += 2) {
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            __m256d acc[2][4];
            for (auto& row : acc)
                for (auto& v : row) v = _mm256_setzero_pd();
            std::size_t p = 0;
            for (; p + 4 <= k; p += 4) {
                const __m256d a0 = _mm256_loadu_pd(a + i * lda + p);
                const __m256d a1 = _mm256_loadu_pd(a + (i + 1) * lda + p);
                for (int q = 0; q < 4; ++q) {
                    const __m256d bv = _mm256_loadu_pd(b + (j + q) * ldb + p);
                    acc[0][q] = _mm256_fmadd_pd(a0, bv, acc[0][q]);
                    acc[1][q] = _mm256_fmadd_pd(a1, bv, acc[1][q]);
                }
            }
            for (int r = 0; r < 2; ++r)
                for (int q = 0; q < 4; ++q) {
                    double s = hsum(acc[r][q]);
                    for (std::size_t pp = p; pp < k; ++pp) s += a[(i + r) * lda + pp] * b[(j + q) * ldb + pp];
                    c[(i + r) * ldc + j + q] += s;
                }
        }
        for (; j < n; ++j) {
            c[i * ldc + j] += dot_d(a + i * lda, b + j * ldb, k);
            c[(i + 1) * ldc + j] += dot_d(a + (i + 1) * lda, b + j * ldb, k);
        }
    }
    for (; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot_d(a + i * lda, b + j * ldb, k);
}

constexpr KernelTable<float> kFloat{"avx2",  &dot_f,   &axpy_f,           &mul_acc_f, &decay_acc_f,
                                    &sum_f,  &scale_f, &gemm_avx2<float>, &gemm_nt_f};
constexpr KernelTable<double> kDouble{"avx2", &dot_d,   &axpy_d,            &mul_acc_d, &decay_acc_d,
                                      &sum_d, &scale_d, &gemm_avx2<double>, &gemm_nt_d};

}  // namespace

namespace detail {
const KernelTable<float>* avx2_float_table() { return &kFloat; }
const KernelTable<double>* avx2_double_table() { return &kDouble; }
}  // namespace detail

}  // namespace m2r::simd

#else

namespace m2r::simd::detail {
const KernelTable<float>* avx2_float_table() { return nullptr; }
const KernelTable<double>* avx2_double_table() { return nullptr; }
}  // namespace m2r::simd::detail

#endif
