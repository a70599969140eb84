#pragma once

// Encoder/decoder building blocks assembled from the tensor primitives.

#include <cstddef>
#include <string>

#include "m2r/params.hpp"

namespace m2r {

struct BlockParams {
    std::size_t channels = 16;
    double expansion = 2.0;  // feed-forward width ratio
    std::size_t heads = 1;   // channel-attention groups

    void validate() const;
};

// Channel-wise LayerNorm over axis 1 of a [B, C, ...] map.
template <typename T>
class ChannelNorm {
public:
    ChannelNorm() = default;
    explicit ChannelNorm(std::size_t channels);

    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;

    Tensor<T> gamma, beta;
    static constexpr double kEps = 1e-5;
};

// 3x3 same-padded convolution lifting RGB to C channels.
template <typename T>
class PatchEmbed {
public:
    PatchEmbed() = default;
    PatchEmbed(std::size_t channels, Rng& rng);

    Tensor<T> forward(const Tensor<T>& image) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;

    Tensor<T> kernel, bias;
};

// Pre-norm residual block: F + Attn(LN(F)), then F + FFN(LN(F)).
//
// Attention runs across channels rather than pixels: per head, queries and
// keys are L2-normalized along the spatial axis, the C/h x C/h affinity is
// scaled by a learned temperature and softmaxed, and mixes the value maps.
// The cost is linear in H*W. The feed-forward path is two 1x1 convolutions
// with a GELU in between.
template <typename T>
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(const BlockParams& params, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;

    // Zeroes the output projections of both residual branches, which turns
    // the block into the identity map.
    void zero_residual_branches();

    const BlockParams& params() const { return params_; }

    ChannelNorm<T> norm_attn;
    Tensor<T> qkv_kernel, qkv_bias;  // [3C, C, 1, 1]
    Tensor<T> temperature;           // [heads]
    Tensor<T> proj_kernel, proj_bias;
    ChannelNorm<T> norm_ffn;
    Tensor<T> ffn_in_kernel, ffn_in_bias;  // [hidden, C, 1, 1]
    Tensor<T> ffn_out_kernel, ffn_out_bias;

private:
    BlockParams params_;
};

// Strided 3x3 convolution: [B, C, H, W] -> [B, 2C, H/2, W/2].
template <typename T>
class Downsample {
public:
    Downsample() = default;
    Downsample(std::size_t channels, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;

    Tensor<T> kernel, bias;
};

// Nearest-neighbor 2x followed by a 1x1 convolution: [B, C, H, W] -> [B, C/2, 2H, 2W].
template <typename T>
class Upsample {
public:
    Upsample() = default;
    Upsample(std::size_t channels, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;

    Tensor<T> kernel, bias;
};

// 1x1 convolution with bias.
template <typename T>
class Pointwise {
public:
    Pointwise() = default;
    Pointwise(std::size_t c_in, std::size_t c_out, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;

    Tensor<T> kernel, bias;
};

}  // namespace m2r
