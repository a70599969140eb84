#include "m2r/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "m2r/autograd.hpp"
#include "m2r/errors.hpp"
#include "m2r/simd/kernels.hpp"

namespace m2r::ops {

using autograd::grad_of;
using autograd::needs_grad;
using autograd::record;

namespace {

template <typename T>
const simd::KernelTable<T>& K() {
    return simd::active<T>();
}

// Column tile of the GEMM helpers, sized so the streamed operand block stays in L2.
constexpr std::size_t kTile = 256;

// C(MxN) += A(MxK) B(KxN)
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    const auto& kt = K<T>();
    for (std::size_t j0 = 0; j0 < n; j0 += kTile)
        kt.gemm(m, std::min(kTile, n - j0), k, a, k, 1, b + j0, n, c + j0, n);
}

// C(MxN) += A(MxK) B(NxK)^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    const auto& kt = K<T>();
    for (std::size_t p0 = 0; p0 < k; p0 += kTile)
        kt.gemm_nt(m, n, std::min(kTile, k - p0), a + p0, k, b + p0, k, c, n);
}

// C(MxN) += A(KxM)^T B(KxN)
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    const auto& kt = K<T>();
    for (std::size_t j0 = 0; j0 < n; j0 += kTile)
        kt.gemm(m, std::min(kTile, n - j0), k, a, 1, m, b + j0, n, c + j0, n);
}

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
    Shape out;
    std::vector<std::size_t> a_stride;  // per output axis, 0 when broadcast
    std::vector<std::size_t> b_stride;
};

std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    const std::size_t offset = out.size() - in.size();
    for (std::size_t i = in.size(); i-- > 0;) {
        if (in[i] != 1) strides[offset + i] = stride;
        stride *= in[i];
    }
    return strides;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError("cannot broadcast " + to_string(a) + " with " + to_string(b));
        out[i] = std::max(da, db);
    }
    return {out, aligned_strides(a, out), aligned_strides(b, out)};
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <typename Fn>
void for_each_broadcast(const Broadcast& plan, Fn&& fn) {
    const std::size_t rank = plan.out.size();
    const std::size_t inner = plan.out.back();
    const std::size_t as = plan.a_stride.back();
    const std::size_t bs = plan.b_stride.back();
    std::vector<std::size_t> counter(rank, 0);
    std::size_t ai = 0, bi = 0, oi = 0;
    const std::size_t total = numel(plan.out);
    while (oi < total) {
        for (std::size_t j = 0; j < inner; ++j) fn(oi + j, ai + j * as, bi + j * bs);
        oi += inner;
        // Advance the odometer over the outer axes.
        for (std::size_t axis = rank - 1; axis-- > 0;) {
            ai += plan.a_stride[axis];
            bi += plan.b_stride[axis];
            if (++counter[axis] < plan.out[axis]) break;
            ai -= plan.a_stride[axis] * plan.out[axis];
            bi -= plan.b_stride[axis] * plan.out[axis];
            counter[axis] = 0;
        }
    }
}

enum class BinaryKind { add, sub, mul, div };

template <typename T>
Tensor<T> binary(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
    const Broadcast plan = plan_broadcast(a.shape(), b.shape());
    Tensor<T> out(plan.out);
    auto y = out.mutable_data();
    const auto x1 = a.data();
    const auto x2 = b.data();
    const bool same = a.shape() == b.shape();
    if (same) {
        const std::size_t n = y.size();
        switch (kind) {
            case BinaryKind::add: for (std::size_t i = 0; i < n; ++i) y[i] = x1[i] + x2[i]; break;
            case BinaryKind::sub: for (std::size_t i = 0; i < n; ++i) y[i] = x1[i] - x2[i]; break;
            case BinaryKind::mul: for (std::size_t i = 0; i < n; ++i) y[i] = x1[i] * x2[i]; break;
            case BinaryKind::div: for (std::size_t i = 0; i < n; ++i) y[i] = x1[i] / x2[i]; break;
        }
    } else {
        switch (kind) {
            case BinaryKind::add: for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = x1[i] + x2[j]; }); break;
            case BinaryKind::sub: for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = x1[i] - x2[j]; }); break;
            case BinaryKind::mul: for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = x1[i] * x2[j]; }); break;
            case BinaryKind::div: for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = x1[i] / x2[j]; }); break;
        }
    }
    if (needs_grad<T>({&a, &b})) {
        record(out, [kind, plan, a, b](std::span<const T> gy) mutable {
            auto ga = grad_of(a);
            auto gb = grad_of(b);
            const auto xa = a.data();
            const auto xb = b.data();
            for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                const T g = gy[o];
                switch (kind) {
                    case BinaryKind::add:
                        if (!ga.empty()) ga[i] += g;
                        if (!gb.empty()) gb[j] += g;
                        break;
                    case BinaryKind::sub:
                        if (!ga.empty()) ga[i] += g;
                        if (!gb.empty()) gb[j] -= g;
                        break;
                    case BinaryKind::mul:
                        if (!ga.empty()) ga[i] += g * xb[j];
                        if (!gb.empty()) gb[j] += g * xa[i];
                        break;
                    case BinaryKind::div:
                        if (!ga.empty()) ga[i] += g / xb[j];
                        if (!gb.empty()) gb[j] -= g * xa[i] / (xb[j] * xb[j]);
                        break;
                }
            });
        });
    }
    return out;
}

void check_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
}

// outer x extent x inner split around one axis.
struct AxisSplit {
    std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    check_axis(shape, axis);
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(BinaryKind::add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(BinaryKind::sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(BinaryKind::mul, a, b);
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(BinaryKind::div, a, b);
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    Tensor<T> out(x.shape());
    auto y = out.mutable_data();
    const auto in = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[i] + c;
    if (needs_grad<T>({&x})) {
        record(out, [x](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            K<T>().axpy(T{1}, gy.data(), gx.data(), gx.size());
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
    Tensor<T> out(x.shape());
    K<T>().scale(c, x.data().data(), out.mutable_data().data(), x.numel());
    if (needs_grad<T>({&x})) {
        record(out, [x, c](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            K<T>().axpy(c, gy.data(), gx.data(), gx.size());
        });
    }
    return out;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto y = out.mutable_data();
    const auto in = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::abs(in[i]);
    if (needs_grad<T>({&x})) {
        record(out, [x](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            const auto in = x.data();
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += in[i] > T{0} ? gy[i] : (in[i] < T{0} ? -gy[i] : T{0});
        });
    }
    return out;
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
T gelu_value(T x) {
    const T inner = T(kGeluC) * (x + T(kGeluA) * x * x * x);
    return T(0.5) * x * (T{1} + std::tanh(inner));
}

template <typename T>
T gelu_derivative(T x) {
    const T inner = T(kGeluC) * (x + T(kGeluA) * x * x * x);
    const T t = std::tanh(inner);
    const T dinner = T(kGeluC) * (T{1} + T(3 * kGeluA) * x * x);
    return T(0.5) * (T{1} + t) + T(0.5) * x * (T{1} - t * t) * dinner;
}

template <typename T>
T softplus_value(T x) {
    return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid_value(T x) {
    if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
    const T e = std::exp(x);
    return e / (T{1} + e);
}

}  // namespace

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto y = out.mutable_data();
    const auto in = x.data();
    switch (kind) {
        case Activation::gelu: for (std::size_t i = 0; i < y.size(); ++i) y[i] = gelu_value(in[i]); break;
        case Activation::softplus: for (std::size_t i = 0; i < y.size(); ++i) y[i] = softplus_value(in[i]); break;
        case Activation::sigmoid: for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid_value(in[i]); break;
    }
    if (needs_grad<T>({&x})) {
        record(out, [kind, x, out](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            const auto in = x.data();
            const auto y = out.data();
            switch (kind) {
                case Activation::gelu:
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * gelu_derivative(in[i]);
                    break;
                case Activation::softplus:
                    // d/dx softplus = sigmoid(x)
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * sigmoid_value(in[i]);
                    break;
                case Activation::sigmoid:
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * y[i] * (T{1} - y[i]);
                    break;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    const auto in = x.data();
    // Reductions feeding losses accumulate in double for stability in fp32.
    double acc = 0.0;
    for (T v : in) acc += v;
    Tensor<T> out({1}, {static_cast<T>(acc)});
    if (needs_grad<T>({&x})) {
        record(out, [x](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            for (T& g : gx) g += gy[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return mul_scalar(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_to(const Tensor<T>& x, const Shape& shape) {
    const Broadcast plan = plan_broadcast(shape, x.shape());
    if (plan.out != x.shape())
        throw DimensionError("cannot sum " + to_string(x.shape()) + " down to " + to_string(shape));
    Tensor<T> out(shape);
    auto y = out.mutable_data();
    const auto in = x.data();
    for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t) { y[i] += in[o]; });
    if (needs_grad<T>({&x})) {
        record(out, [x, plan](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t) { gx[o] += gy[i]; });
        });
    }
    return out;
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
    const Broadcast plan = plan_broadcast(x.shape(), shape);
    if (plan.out != shape)
        throw DimensionError("cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
    Tensor<T> out(shape);
    auto y = out.mutable_data();
    const auto in = x.data();
    for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t) { y[o] = in[i]; });
    if (needs_grad<T>({&x})) {
        record(out, [x, plan](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t) { gx[i] += gy[o]; });
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
    if (numel(shape) != x.numel())
        throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
    Tensor<T> out(shape, std::vector<T>(x.data().begin(), x.data().end()));
    if (needs_grad<T>({&x})) {
        record(out, [x](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            K<T>().axpy(T{1}, gy.data(), gx.data(), gx.size());
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const Shape& first = parts.front().shape();
    check_axis(first, axis);
    Shape shape = first;
    shape[axis] = 0;
    for (const auto& p : parts) {
        Shape probe = p.shape();
        if (probe.size() != first.size()) throw DimensionError("concat rank mismatch");
        probe[axis] = first[axis];
        if (probe != first)
            throw DimensionError("concat extents " + to_string(p.shape()) + " vs " + to_string(first));
        shape[axis] += p.dim(axis);
    }
    Tensor<T> out(shape);
    const AxisSplit s = split_axis(shape, axis);
    auto y = out.mutable_data();
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t block = p.dim(axis) * s.inner;
        const auto in = p.data();
        for (std::size_t o = 0; o < s.outer; ++o)
            std::copy_n(in.begin() + o * block, block, y.begin() + o * s.extent * s.inner + offset);
        offset += block;
    }
    bool any = false;
    for (const auto& p : parts) any = any || needs_grad<T>({&p});
    if (any) {
        record(out, [parts, s, axis](std::span<const T> gy) mutable {
            std::size_t offset = 0;
            for (auto& p : parts) {
                const std::size_t block = p.dim(axis) * s.inner;
                auto gp = grad_of(p);
                if (!gp.empty())
                    for (std::size_t o = 0; o < s.outer; ++o)
                        K<T>().axpy(T{1}, gy.data() + o * s.extent * s.inner + offset, gp.data() + o * block, block);
                offset += block;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
    const AxisSplit s = split_axis(x.shape(), axis);
    if (length == 0 || start + length > s.extent)
        throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") out of range for shape " + to_string(x.shape()));
    Shape shape = x.shape();
    shape[axis] = length;
    Tensor<T> out(shape);
    auto y = out.mutable_data();
    const auto in = x.data();
    const std::size_t block = length * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(in.begin() + o * s.extent * s.inner + start * s.inner, block, y.begin() + o * block);
    if (needs_grad<T>({&x})) {
        record(out, [x, s, start, block](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            for (std::size_t o = 0; o < s.outer; ++o)
                K<T>().axpy(T{1}, gy.data() + o * block, gx.data() + o * s.extent * s.inner + start * s.inner, block);
        });
    }
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (weight.rank() != 2 || x.shape().back() != weight.dim(0))
        throw DimensionError("linear: x " + to_string(x.shape()) + " does not fit W " + to_string(weight.shape()));
    const std::size_t d_in = weight.dim(0);
    const std::size_t d_out = weight.dim(1);
    if (bias.defined() && bias.numel() != d_out)
        throw DimensionError("linear: bias " + to_string(bias.shape()) + " for W " + to_string(weight.shape()));
    const std::size_t rows = x.numel() / d_in;
    Shape shape = x.shape();
    shape.back() = d_out;
    Tensor<T> out(shape);
    auto y = out.mutable_data();
    if (bias.defined())
        for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), y.begin() + r * d_out);
    gemm_nn(rows, d_out, d_in, x.data().data(), weight.data().data(), y.data());
    if (needs_grad<T>({&x, &weight, &bias})) {
        record(out, [x, weight, bias, rows, d_in, d_out](std::span<const T> gy) mutable {
            if (auto gx = grad_of(x); !gx.empty()) gemm_nt(rows, d_in, d_out, gy.data(), weight.data().data(), gx.data());
            if (auto gw = grad_of(weight); !gw.empty()) gemm_tn(d_in, d_out, rows, x.data().data(), gy.data(), gw.data());
            if (auto gb = grad_of(bias); !gb.empty())
                for (std::size_t r = 0; r < rows; ++r) K<T>().axpy(T{1}, gy.data() + r * d_out, gb.data(), d_out);
        });
    }
    return out;
}

template <typename T>
Tensor<T> channel_linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.rank() < 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0))
        throw DimensionError("channel_linear: x " + to_string(x.shape()) + " does not fit W " +
                             to_string(weight.shape()));
    const std::size_t batch = x.dim(0);
    const std::size_t c_in = weight.dim(0);
    const std::size_t c_out = weight.dim(1);
    if (bias.defined() && bias.numel() != c_out)
        throw DimensionError("channel_linear: bias " + to_string(bias.shape()) + " for W " + to_string(weight.shape()));
    const std::size_t positions = x.numel() / (batch * c_in);
    Shape shape = x.shape();
    shape[1] = c_out;
    Tensor<T> out(shape);
    auto y = out.mutable_data();
    for (std::size_t b = 0; b < batch; ++b) {
        T* yb = y.data() + b * c_out * positions;
        if (bias.defined())
            for (std::size_t c = 0; c < c_out; ++c) std::fill_n(yb + c * positions, positions, bias.data()[c]);
        gemm_tn(c_out, positions, c_in, weight.data().data(), x.data().data() + b * c_in * positions, yb);
    }
    if (needs_grad<T>({&x, &weight, &bias})) {
        record(out, [x, weight, bias, batch, c_in, c_out, positions](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            auto gw = grad_of(weight);
            auto gb = grad_of(bias);
            for (std::size_t b = 0; b < batch; ++b) {
                const T* gyb = gy.data() + b * c_out * positions;
                if (!gx.empty()) gemm_nn(c_in, positions, c_out, weight.data().data(), gyb, gx.data() + b * c_in * positions);
                if (!gw.empty()) gemm_nt(c_in, c_out, positions, x.data().data() + b * c_in * positions, gyb, gw.data());
                if (!gb.empty())
                    for (std::size_t c = 0; c < c_out; ++c) gb[c] += K<T>().sum(gyb + c * positions, positions);
            }
        });
    }
    return out;
}

namespace {

struct ConvGeometry {
    std::size_t batch, c_in, h, w, c_out, c_in_group, kh, kw, stride, groups, pad_h, pad_w, out_h, out_w;
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& kernel, const Conv2dOptions& opt) {
    if (x.rank() != 4 || kernel.rank() != 4)
        throw DimensionError("conv2d expects [B,C,H,W] input and [Co,Ci/g,kh,kw] kernel, got " + to_string(x.shape()) +
                             " and " + to_string(kernel.shape()));
    if (opt.groups == 0 || opt.stride == 0) throw ConfigError("conv2d: groups and stride must be positive");
    ConvGeometry g{};
    g.batch = x.dim(0);
    g.c_in = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.c_out = kernel.dim(0);
    g.c_in_group = kernel.dim(1);
    g.kh = kernel.dim(2);
    g.kw = kernel.dim(3);
    g.stride = opt.stride;
    g.groups = opt.groups;
    if (g.c_in % g.groups != 0 || g.c_out % g.groups != 0)
        throw ConfigError("conv2d: groups=" + std::to_string(g.groups) + " does not divide channels " +
                          std::to_string(g.c_in) + " -> " + std::to_string(g.c_out));
    if (g.c_in / g.groups != g.c_in_group)
        throw DimensionError("conv2d: kernel " + to_string(kernel.shape()) + " expects " +
                             std::to_string(g.c_in_group * g.groups) + " input channels, got " +
                             std::to_string(g.c_in));
    if (opt.padding == Padding::same) {
        if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ConfigError("conv2d: same padding needs odd kernel extents");
        g.pad_h = g.kh / 2;
        g.pad_w = g.kw / 2;
    }
    if (g.h + 2 * g.pad_h < g.kh || g.w + 2 * g.pad_w < g.kw)
        throw DimensionError("conv2d: input " + to_string(x.shape()) + " smaller than kernel");
    g.out_h = (g.h + 2 * g.pad_h - g.kh) / g.stride + 1;
    g.out_w = (g.w + 2 * g.pad_w - g.kw) / g.stride + 1;
    return g;
}

// Valid output column range [lo, hi) for kernel column kx at stride 1.
inline std::pair<std::size_t, std::size_t> column_range(const ConvGeometry& g, std::size_t kx) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(g.pad_w) - static_cast<std::ptrdiff_t>(kx));
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.out_w),
                                                        static_cast<std::ptrdiff_t>(g.w + g.pad_w) - static_cast<std::ptrdiff_t>(kx));
    if (hi <= lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Visits every (input row, output row, column span, kernel tap) of one
// input/output plane pair at stride 1.
template <typename Fn>
void for_each_tap_stride1(const ConvGeometry& g, Fn&& fn) {
    for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto [lo, hi] = column_range(g, kx);
            if (hi == lo) continue;
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                // input offset, output offset, run length, kernel tap
                fn(static_cast<std::size_t>(iy) * g.w + lo + kx - g.pad_w, oy * g.out_w + lo, hi - lo, ky * g.kw + kx);
            }
        }
}

template <typename Fn>
void for_each_tap_strided(const ConvGeometry& g, Fn&& fn) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.out_w; ++ox)
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const std::ptrdiff_t ix =
                        static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                    fn(static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix), oy * g.out_w + ox, ky * g.kw + kx);
                }
        }
}

// Unfolds one image [C, H, W] into columns [C*kh*kw, out_h*out_w]; padded
// taps read as zero.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
    const std::size_t out_plane = g.out_h * g.out_w;
    for (std::size_t ci = 0; ci < g.c_in; ++ci)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = col + ((ci * g.kh + ky) * g.kw + kx) * out_plane;
                const T* xp = x + ci * g.h * g.w;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    T* dst = row + oy * g.out_w;
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill_n(dst, g.out_w, T{0});
                        continue;
                    }
                    const T* src = xp + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0} : src[ix];
                    }
                }
            }
}

// Adjoint of im2col: accumulates columns back into [C, H, W].
template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* x) {
    const std::size_t out_plane = g.out_h * g.out_w;
    for (std::size_t ci = 0; ci < g.c_in; ++ci)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * out_plane;
                T* xp = x + ci * g.h * g.w;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    const T* src = row + oy * g.out_w;
                    T* dst = xp + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, Conv2dOptions options) {
    const ConvGeometry g = conv_geometry(x, kernel, options);
    if (bias.defined() && bias.numel() != g.c_out)
        throw DimensionError("conv2d: bias " + to_string(bias.shape()) + " for " + std::to_string(g.c_out) + " outputs");
    Tensor<T> out({g.batch, g.c_out, g.out_h, g.out_w});
    auto y = out.mutable_data();
    const auto xin = x.data();
    const auto kd = kernel.data();
    const std::size_t in_plane = g.h * g.w;
    const std::size_t out_plane = g.out_h * g.out_w;
    const std::size_t taps = g.kh * g.kw;
    const std::size_t out_per_group = g.c_out / g.groups;
    const bool pointwise = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad_h == 0 && g.pad_w == 0;
    const bool dense = g.groups == 1;
    const auto& kt = K<T>();
    std::vector<T> col(dense && !pointwise ? g.c_in * taps * out_plane : 0);

    for (std::size_t b = 0; b < g.batch; ++b) {
        if (dense) {
            T* yb = y.data() + b * g.c_out * out_plane;
            if (bias.defined())
                for (std::size_t co = 0; co < g.c_out; ++co) std::fill_n(yb + co * out_plane, out_plane, bias.data()[co]);
            const T* xb = xin.data() + b * g.c_in * in_plane;
            if (!pointwise) {
                im2col(g, xb, col.data());
                xb = col.data();
            }
            gemm_nn(g.c_out, out_plane, g.c_in * taps, kd.data(), xb, yb);
            continue;
        }
        for (std::size_t co = 0; co < g.c_out; ++co) {
            T* yp = y.data() + (b * g.c_out + co) * out_plane;
            if (bias.defined()) std::fill_n(yp, out_plane, bias.data()[co]);
            const std::size_t group = co / out_per_group;
            for (std::size_t cl = 0; cl < g.c_in_group; ++cl) {
                const std::size_t ci = group * g.c_in_group + cl;
                const T* xp = xin.data() + (b * g.c_in + ci) * in_plane;
                const T* kp = kd.data() + (co * g.c_in_group + cl) * taps;
                if (g.stride == 1)
                    for_each_tap_stride1(g, [&](std::size_t io, std::size_t oo, std::size_t len, std::size_t tap) {
                        kt.axpy(kp[tap], xp + io, yp + oo, len);
                    });
                else
                    for_each_tap_strided(g, [&](std::size_t io, std::size_t oo, std::size_t tap) { yp[oo] += kp[tap] * xp[io]; });
            }
        }
    }

    if (needs_grad<T>({&x, &kernel, &bias})) {
        record(out, [x, kernel, bias, g, pointwise, dense](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            auto gk = grad_of(kernel);
            auto gb = grad_of(bias);
            const auto xin = x.data();
            const auto kd = kernel.data();
            const std::size_t in_plane = g.h * g.w;
            const std::size_t out_plane = g.out_h * g.out_w;
            const std::size_t taps = g.kh * g.kw;
            const std::size_t out_per_group = g.c_out / g.groups;
            const auto& kt = K<T>();
            const std::size_t rows = g.c_in * taps;
            std::vector<T> col(dense && !pointwise ? rows * out_plane : 0);
            std::vector<T> gcol(dense && !pointwise && !gx.empty() ? rows * out_plane : 0);
            for (std::size_t b = 0; b < g.batch; ++b) {
                if (!gb.empty())
                    for (std::size_t co = 0; co < g.c_out; ++co)
                        gb[co] += kt.sum(gy.data() + (b * g.c_out + co) * out_plane, out_plane);
                if (dense) {
                    const T* gyb = gy.data() + b * g.c_out * out_plane;
                    const T* xb = xin.data() + b * g.c_in * in_plane;
                    if (pointwise) {
                        if (!gx.empty()) gemm_tn(g.c_in, out_plane, g.c_out, kd.data(), gyb, gx.data() + b * g.c_in * in_plane);
                        if (!gk.empty()) gemm_nt(g.c_out, g.c_in, out_plane, gyb, xb, gk.data());
                        continue;
                    }
                    if (!gk.empty()) {
                        im2col(g, xb, col.data());
                        gemm_nt(g.c_out, rows, out_plane, gyb, col.data(), gk.data());
                    }
                    if (!gx.empty()) {
                        std::fill(gcol.begin(), gcol.end(), T{0});
                        gemm_tn(rows, out_plane, g.c_out, kd.data(), gyb, gcol.data());
                        col2im_add(g, gcol.data(), gx.data() + b * g.c_in * in_plane);
                    }
                    continue;
                }
                for (std::size_t co = 0; co < g.c_out; ++co) {
                    const T* gp = gy.data() + (b * g.c_out + co) * out_plane;
                    const std::size_t group = co / out_per_group;
                    for (std::size_t cl = 0; cl < g.c_in_group; ++cl) {
                        const std::size_t ci = group * g.c_in_group + cl;
                        const std::size_t plane = (b * g.c_in + ci) * in_plane;
                        const T* xp = xin.data() + plane;
                        const std::size_t kbase = (co * g.c_in_group + cl) * taps;
                        if (g.stride == 1) {
                            for_each_tap_stride1(g, [&](std::size_t io, std::size_t oo, std::size_t len, std::size_t tap) {
                                if (!gx.empty()) kt.axpy(kd[kbase + tap], gp + oo, gx.data() + plane + io, len);
                                if (!gk.empty()) gk[kbase + tap] += kt.dot(xp + io, gp + oo, len);
                            });
                        } else {
                            for_each_tap_strided(g, [&](std::size_t io, std::size_t oo, std::size_t tap) {
                                if (!gx.empty()) gx[plane + io] += kd[kbase + tap] * gp[oo];
                                if (!gk.empty()) gk[kbase + tap] += xp[io] * gp[oo];
                            });
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps, std::size_t axis) {
    if (!(eps > T{0})) throw ConfigError("layer_norm: eps must be positive");
    const AxisSplit s = split_axis(x.shape(), axis);
    if (gamma.numel() != s.extent || beta.numel() != s.extent)
        throw DimensionError("layer_norm: gamma/beta " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                             " for axis extent " + std::to_string(s.extent));
    Tensor<T> out(x.shape());
    auto y = out.mutable_data();
    const auto in = x.data();
    const auto gm = gamma.data();
    const auto bt = beta.data();
    // Normalized values and reciprocal std are kept for the backward pass.
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto rstd = std::make_shared<std::vector<T>>(s.outer * s.inner);
    std::vector<T> mu(s.inner), var(s.inner);
    const T inv_n = T{1} / static_cast<T>(s.extent);
    for (std::size_t o = 0; o < s.outer; ++o) {
        const std::size_t base = o * s.extent * s.inner;
        std::fill(mu.begin(), mu.end(), T{0});
        std::fill(var.begin(), var.end(), T{0});
        for (std::size_t c = 0; c < s.extent; ++c) {
            const T* row = in.data() + base + c * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) mu[i] += row[i];
        }
        for (T& m : mu) m *= inv_n;
        for (std::size_t c = 0; c < s.extent; ++c) {
            const T* row = in.data() + base + c * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) {
                const T d = row[i] - mu[i];
                var[i] += d * d;
            }
        }
        T* rs = rstd->data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) rs[i] = T{1} / std::sqrt(var[i] * inv_n + eps);
        for (std::size_t c = 0; c < s.extent; ++c) {
            const std::size_t off = base + c * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) {
                const T h = (in[off + i] - mu[i]) * rs[i];
                (*xhat)[off + i] = h;
                y[off + i] = gm[c] * h + bt[c];
            }
        }
    }
    if (needs_grad<T>({&x, &gamma, &beta})) {
        record(out, [x, gamma, beta, s, xhat, rstd](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            auto gg = grad_of(gamma);
            auto gbt = grad_of(beta);
            const auto gm = gamma.data();
            const T inv_n = T{1} / static_cast<T>(s.extent);
            std::vector<T> mean_g(s.inner), mean_gh(s.inner);
            for (std::size_t o = 0; o < s.outer; ++o) {
                const std::size_t base = o * s.extent * s.inner;
                for (std::size_t c = 0; c < s.extent; ++c) {
                    const std::size_t off = base + c * s.inner;
                    if (!gg.empty()) gg[c] += K<T>().dot(gy.data() + off, xhat->data() + off, s.inner);
                    if (!gbt.empty()) gbt[c] += K<T>().sum(gy.data() + off, s.inner);
                }
                if (gx.empty()) continue;
                std::fill(mean_g.begin(), mean_g.end(), T{0});
                std::fill(mean_gh.begin(), mean_gh.end(), T{0});
                for (std::size_t c = 0; c < s.extent; ++c) {
                    const std::size_t off = base + c * s.inner;
                    for (std::size_t i = 0; i < s.inner; ++i) {
                        const T g = gy[off + i] * gm[c];
                        mean_g[i] += g;
                        mean_gh[i] += g * (*xhat)[off + i];
                    }
                }
                const T* rs = rstd->data() + o * s.inner;
                for (std::size_t c = 0; c < s.extent; ++c) {
                    const std::size_t off = base + c * s.inner;
                    for (std::size_t i = 0; i < s.inner; ++i) {
                        const T g = gy[off + i] * gm[c];
                        gx[off + i] += rs[i] * (g - mean_g[i] * inv_n - (*xhat)[off + i] * mean_gh[i] * inv_n);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const AxisSplit s = split_axis(x.shape(), axis);
    Tensor<T> out(x.shape());
    auto y = out.mutable_data();
    const auto in = x.data();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            T peak = -std::numeric_limits<T>::infinity();
            for (std::size_t c = 0; c < s.extent; ++c) peak = std::max(peak, in[base + c * s.inner]);
            if (peak == -std::numeric_limits<T>::infinity())
                throw DegenerateAxisError("softmax: every entry along axis " + std::to_string(axis) + " is -inf");
            T total = 0;
            for (std::size_t c = 0; c < s.extent; ++c) {
                const T e = std::exp(in[base + c * s.inner] - peak);
                y[base + c * s.inner] = e;
                total += e;
            }
            for (std::size_t c = 0; c < s.extent; ++c) y[base + c * s.inner] /= total;
        }
    if (needs_grad<T>({&x})) {
        record(out, [x, out, s](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            const auto y = out.data();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t i = 0; i < s.inner; ++i) {
                    const std::size_t base = o * s.extent * s.inner + i;
                    T inner = 0;
                    for (std::size_t c = 0; c < s.extent; ++c) inner += y[base + c * s.inner] * gy[base + c * s.inner];
                    for (std::size_t c = 0; c < s.extent; ++c) {
                        const std::size_t k = base + c * s.inner;
                        gx[k] += y[k] * (gy[k] - inner);
                    }
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.rank() != 4) throw DimensionError("global_avg_pool expects [B,C,H,W], got " + to_string(x.shape()));
    const std::size_t planes = x.dim(0) * x.dim(1);
    const std::size_t area = x.dim(2) * x.dim(3);
    Tensor<T> out({x.dim(0), x.dim(1)});
    auto y = out.mutable_data();
    for (std::size_t p = 0; p < planes; ++p) y[p] = K<T>().sum(x.data().data() + p * area, area) / static_cast<T>(area);
    if (needs_grad<T>({&x})) {
        record(out, [x, planes, area](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            for (std::size_t p = 0; p < planes; ++p) {
                const T g = gy[p] / static_cast<T>(area);
                for (std::size_t i = 0; i < area; ++i) gx[p * area + i] += g;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        throw DimensionError("matmul expects batched [Bt,M,K] operands, got " + to_string(a.shape()) + " and " +
                             to_string(b.shape()));
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t kb = transpose_b ? b.dim(2) : b.dim(1);
    const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
    if (kb != k) throw DimensionError("matmul inner extents differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    Tensor<T> out({batch, m, n});
    auto y = out.mutable_data();
    for (std::size_t t = 0; t < batch; ++t) {
        const T* ap = a.data().data() + t * m * k;
        const T* bp = b.data().data() + t * k * n;
        T* yp = y.data() + t * m * n;
        if (transpose_b)
            gemm_nt(m, n, k, ap, bp, yp);
        else
            gemm_nn(m, n, k, ap, bp, yp);
    }
    if (needs_grad<T>({&a, &b})) {
        record(out, [a, b, transpose_b, batch, m, n, k](std::span<const T> gy) mutable {
            auto ga = grad_of(a);
            auto gb = grad_of(b);
            for (std::size_t t = 0; t < batch; ++t) {
                const T* ap = a.data().data() + t * m * k;
                const T* bp = b.data().data() + t * k * n;
                const T* gp = gy.data() + t * m * n;
                if (transpose_b) {
                    // y = a b^T: da = gy b, db = gy^T a
                    if (!ga.empty()) gemm_nn(m, k, n, gp, bp, ga.data() + t * m * k);
                    if (!gb.empty()) gemm_tn(n, k, m, gp, ap, gb.data() + t * k * n);
                } else {
                    // y = a b: da = gy b^T, db = a^T gy
                    if (!ga.empty()) gemm_nt(m, k, n, gp, bp, ga.data() + t * m * k);
                    if (!gb.empty()) gemm_tn(k, n, m, ap, gp, gb.data() + t * k * n);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
    const std::size_t width = x.shape().back();
    const std::size_t rows = x.numel() / width;
    Tensor<T> out(x.shape());
    auto y = out.mutable_data();
    auto norms = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = x.data().data() + r * width;
        const T norm = std::max(std::sqrt(K<T>().dot(row, row, width)), eps);
        (*norms)[r] = norm;
        K<T>().scale(T{1} / norm, row, y.data() + r * width, width);
    }
    if (needs_grad<T>({&x})) {
        record(out, [x, out, norms, eps, rows, width](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            const auto y = out.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T norm = (*norms)[r];
                const T* g = gy.data() + r * width;
                T* d = gx.data() + r * width;
                if (norm > eps) {
                    const T proj = K<T>().dot(y.data() + r * width, g, width);
                    for (std::size_t i = 0; i < width; ++i) d[i] += (g[i] - y[r * width + i] * proj) / norm;
                } else {
                    K<T>().axpy(T{1} / eps, g, d, width);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    if (x.rank() != 4) throw DimensionError("upsample expects [B,C,H,W], got " + to_string(x.shape()));
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> out({x.dim(0), x.dim(1), 2 * h, 2 * w});
    auto y = out.mutable_data();
    const auto in = x.data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t r = 0; r < 2 * h; ++r)
            for (std::size_t c = 0; c < 2 * w; ++c) y[(p * 2 * h + r) * 2 * w + c] = in[(p * h + r / 2) * w + c / 2];
    if (needs_grad<T>({&x})) {
        record(out, [x, planes, h, w](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t r = 0; r < 2 * h; ++r)
                    for (std::size_t c = 0; c < 2 * w; ++c) gx[(p * h + r / 2) * w + c / 2] += gy[(p * 2 * h + r) * 2 * w + c];
        });
    }
    return out;
}

template <typename T>
Tensor<T> gather_positions(const Tensor<T>& x, const std::vector<std::size_t>& positions) {
    if (x.rank() < 2 || positions.empty()) throw ContractError("gather_positions needs [B,C,...] input and positions");
    const std::size_t batch = x.dim(0), channels = x.dim(1);
    const std::size_t area = x.numel() / (batch * channels);
    const std::size_t n = positions.size();
    for (std::size_t pos : positions)
        if (pos >= batch * area) throw DimensionError("gather_positions: position out of range");
    Tensor<T> out({1, channels, 1, n});
    auto y = out.mutable_data();
    const auto in = x.data();
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t b = positions[j] / area, p = positions[j] % area;
            y[c * n + j] = in[(b * channels + c) * area + p];
        }
    if (needs_grad<T>({&x})) {
        record(out, [x, positions, channels, area, n](std::span<const T> gy) mutable {
            auto gx = grad_of(x);
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t b = positions[j] / area, p = positions[j] % area;
                    gx[(b * channels + c) * area + p] += gy[c * n + j];
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scatter_positions(const Tensor<T>& values, const std::vector<std::size_t>& positions, const Shape& shape) {
    if (shape.size() < 2 || values.rank() != 4 || values.dim(1) != shape[1] || values.dim(3) != positions.size())
        throw DimensionError("scatter_positions: values " + to_string(values.shape()) + " do not fit " + to_string(shape));
    const std::size_t batch = shape[0], channels = shape[1];
    const std::size_t area = numel(shape) / (batch * channels);
    const std::size_t n = positions.size();
    Tensor<T> out(shape);
    auto y = out.mutable_data();
    const auto in = values.data();
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t b = positions[j] / area, p = positions[j] % area;
            y[(b * channels + c) * area + p] = in[c * n + j];
        }
    if (needs_grad<T>({&values})) {
        record(out, [values, positions, channels, area, n](std::span<const T> gy) mutable {
            auto gv = grad_of(values);
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t b = positions[j] / area, p = positions[j] % area;
                    gv[c * n + j] += gy[(b * channels + c) * area + p];
                }
        });
    }
    return out;
}

template <typename T>
void fill_uniform(Tensor<T>& t, T bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
    for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_normal(Tensor<T>& t, T stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
}

#define M2R_INSTANTIATE_OPS(T)                                                                                 \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                        \
    template Tensor<T> mul_scalar(const Tensor<T>&, T);                                                        \
    template Tensor<T> abs(const Tensor<T>&);                                                                  \
    template Tensor<T> activation(Activation, const Tensor<T>&);                                               \
    template Tensor<T> sum(const Tensor<T>&);                                                                  \
    template Tensor<T> mean(const Tensor<T>&);                                                                 \
    template Tensor<T> sum_to(const Tensor<T>&, const Shape&);                                                 \
    template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                                           \
    template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                                \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                     \
    template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                         \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> channel_linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dOptions);            \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T, std::size_t);       \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                 \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                                      \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool);                                       \
    template Tensor<T> l2_normalize(const Tensor<T>&, T);                                                      \
    template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                                   \
    template Tensor<T> gather_positions(const Tensor<T>&, const std::vector<std::size_t>&);                    \
    template Tensor<T> scatter_positions(const Tensor<T>&, const std::vector<std::size_t>&, const Shape&);     \
    template void fill_uniform(Tensor<T>&, T, Rng&);                                                           \
    template void fill_normal(Tensor<T>&, T, Rng&);

M2R_INSTANTIATE_OPS(float)
M2R_INSTANTIATE_OPS(double)

#undef M2R_INSTANTIATE_OPS

}  // namespace m2r::ops
