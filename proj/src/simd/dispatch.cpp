#include <cstdlib>
#include <string_view>

#include "m2r/simd/kernels.hpp"

namespace m2r::simd {

namespace detail {
const KernelTable<float>* avx2_float_table();
const KernelTable<double>* avx2_double_table();
}  // namespace detail

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

template <>
const KernelTable<float>* avx2_kernels<float>() {
    return cpu_has_avx2_fma() ? detail::avx2_float_table() : nullptr;
}

template <>
const KernelTable<double>* avx2_kernels<double>() {
    return cpu_has_avx2_fma() ? detail::avx2_double_table() : nullptr;
}

namespace {

bool scalar_forced() {
    const char* env = std::getenv("M2R_SIMD");
    return env != nullptr && std::string_view(env) == "scalar";
}

template <typename T>
const KernelTable<T>& pick() {
    if (!scalar_forced()) {
        if (const KernelTable<T>* table = avx2_kernels<T>()) return *table;
    }
    return scalar_kernels<T>();
}

}  // namespace

template <>
const KernelTable<float>& active<float>() {
    static const KernelTable<float>& table = pick<float>();
    return table;
}

template <>
const KernelTable<double>& active<double>() {
    static const KernelTable<double>& table = pick<double>();
    return table;
}

}  // namespace m2r::simd
