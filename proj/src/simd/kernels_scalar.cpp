#include "m2r/simd/kernels.hpp"

namespace m2r::simd {
namespace {

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <typename T>
void axpy(T a, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void mul_acc(const T* x, const T* y, T* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] += x[i] * y[i];
}

template <typename T>
void decay_acc(const T* a, const T* x, T* h, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) h[i] = a[i] * h[i] + x[i];
}

template <typename T>
T sum(const T* x, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename T>
void scale(T a, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a * x[i];
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_rs, std::size_t a_cs, const T* b,
          std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T acc = c[i * ldc + j];
            for (std::size_t p = 0; p < k; ++p) acc += a[i * a_rs + p * a_cs] * b[p * ldb + j];
            c[i * ldc + j] = acc;
        }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot(a + i * lda, b + j * ldb, k);
}

template <typename T>
constexpr KernelTable<T> make_table() {
    return {"scalar", &dot<T>, &axpy<T>, &mul_acc<T>, &decay_acc<T>, &sum<T>, &scale<T>, &gemm<T>, &gemm_nt<T>};
}

constexpr KernelTable<float> kFloat = make_table<float>();
constexpr KernelTable<double> kDouble = make_table<double>();

}  // namespace

template <>
const KernelTable<float>& scalar_kernels<float>() {
    return kFloat;
}

template <>
const KernelTable<double>& scalar_kernels<double>() {
    return kDouble;
}

}  // namespace m2r::simd
