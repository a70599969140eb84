#pragma once

// Differentiable primitives. Feature maps are channel-first [B, C, H, W].
// Every function returns a new tensor and records its backward pass on the
// current tape when an input requires a gradient.

#include <cstddef>
#include <random>
#include <vector>

#include "m2r/tensor.hpp"

namespace m2r {

using Rng = std::mt19937_64;

namespace ops {

enum class Padding { same, valid };
enum class Activation { gelu, softplus, sigmoid };

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t groups = 1;
    Padding padding = Padding::same;
};

// Elementwise arithmetic with right-aligned (numpy-style) broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T c);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T c);
template <typename T> Tensor<T> abs(const Tensor<T>& x);

// GELU uses the tanh approximation
// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T> Tensor<T> activation(Activation kind, const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x) { return activation(Activation::gelu, x); }
template <typename T> Tensor<T> softplus(const Tensor<T>& x) { return activation(Activation::softplus, x); }
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) { return activation(Activation::sigmoid, x); }

// Full reductions to shape [1].
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// Sums x down to `shape`, which must broadcast to x.shape().
template <typename T> Tensor<T> sum_to(const Tensor<T>& x, const Shape& shape);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

// y = x W (+ b) over the last axis; x is [..., d_in], W is [d_in, d_out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

// Pointwise channel mixing on channel-first maps: x is [B, C_in, ...],
// W is [C_in, C_out], result is [B, C_out, ...].
template <typename T>
Tensor<T> channel_linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

// Cross-correlation. x is [B, C, H, W], kernel is [C_out, C/groups, kh, kw].
// Same padding is zero padding and needs odd kernel extents.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias = {},
                 Conv2dOptions options = {});

// Normalizes over `axis` (zero mean, unit variance) then applies gamma/beta,
// both of extent x.dim(axis).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps, std::size_t axis);

// Max-shifted softmax. -inf entries are masked out; an all -inf slice throws
// DegenerateAxisError.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// [B, C, H, W] -> [B, C]
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

// Batched product of [Bt, M, K] with [Bt, K, N], or with [Bt, N, K] when
// transpose_b is set.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// x / max(||x||, eps) along the last axis.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x, T eps);

// [B, C, H, W] -> [B, C, 2H, 2W] by pixel replication.
template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& x);

// Picks columns out of a [B, C, ...] map. `positions` index the flattened
// (batch, spatial) grid, b * P + p. Result is [1, C, 1, n].
template <typename T>
Tensor<T> gather_positions(const Tensor<T>& x, const std::vector<std::size_t>& positions);

// Adjoint of gather_positions: writes [1, C, 1, n] columns into a zero map of
// `shape`. Positions must be distinct.
template <typename T>
Tensor<T> scatter_positions(const Tensor<T>& values, const std::vector<std::size_t>& positions, const Shape& shape);

// Parameter initialization.
template <typename T> void fill_uniform(Tensor<T>& t, T bound, Rng& rng);
template <typename T> void fill_normal(Tensor<T>& t, T stddev, Rng& rng);

}  // namespace ops
}  // namespace m2r
