#pragma once

// Vector kernels behind every arithmetic inner loop of the tensor engine.
//
// Each kernel set is a table of plain function pointers. The scalar table is
// the reference; the AVX2 table is compiled in a separate translation unit
// with -mavx2 -mfma and only handed out when the running CPU supports it.
// The choice is made once per process (see active()) so results are
// reproducible across runs on one machine.

#include <cstddef>
#include <string_view>

namespace m2r::simd {

template <typename T>
struct KernelTable {
    std::string_view name;
    // sum_i x[i] * y[i]
    T (*dot)(const T* x, const T* y, std::size_t n);
    // y[i] += a * x[i]
    void (*axpy)(T a, const T* x, T* y, std::size_t n);
    // z[i] += x[i] * y[i]
    void (*mul_acc)(const T* x, const T* y, T* z, std::size_t n);
    // h[i] = a[i] * h[i] + x[i]
    void (*decay_acc)(const T* a, const T* x, T* h, std::size_t n);
    // sum_i x[i]
    T (*sum)(const T* x, std::size_t n);
    // y[i] = a * x[i]
    void (*scale)(T a, const T* x, T* y, std::size_t n);
    // C[i, j] += sum_p A(i, p) B[p, j] over an m x n block, where
    // A(i, p) = a[i * a_rs + p * a_cs] (either layout of A), B and C are
    // row-major with leading dimensions ldb and ldc.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_rs, std::size_t a_cs,
                 const T* b, std::size_t ldb, T* c, std::size_t ldc);
    // C[i, j] += sum_p a[i * lda + p] b[j * ldb + p]: row-by-row dot products.
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                    std::size_t ldb, T* c, std::size_t ldc);
};

template <typename T>
const KernelTable<T>& scalar_kernels();

// nullptr when the binary was built without AVX2 support or the CPU lacks it.
template <typename T>
const KernelTable<T>* avx2_kernels();

// The table used by the engine. Honors M2R_SIMD=scalar to force the
// reference path.
template <typename T>
const KernelTable<T>& active();

bool cpu_has_avx2_fma();

}  // namespace m2r::simd
