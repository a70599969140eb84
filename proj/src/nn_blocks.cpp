#include "m2r/nn_blocks.hpp"

#include <cmath>

#include "m2r/errors.hpp"

namespace m2r {

void BlockParams::validate() const {
    if (channels == 0 || heads == 0 || channels % heads != 0)
        throw ConfigError("block channels " + std::to_string(channels) + " not divisible by heads " +
                          std::to_string(heads));
    if (!(expansion >= 1.0)) throw ConfigError("block expansion must be >= 1");
}

template <typename T>
ChannelNorm<T>::ChannelNorm(std::size_t channels)
    : gamma(constant_param<T>({channels}, T{1})), beta(constant_param<T>({channels}, T{0})) {}

template <typename T>
Tensor<T> ChannelNorm<T>::forward(const Tensor<T>& x) const {
    return ops::layer_norm(x, gamma, beta, static_cast<T>(kEps), 1);
}

template <typename T>
void ChannelNorm<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix, "gamma", gamma);
    add_param(out, prefix, "beta", beta);
}

template <typename T>
PatchEmbed<T>::PatchEmbed(std::size_t channels, Rng& rng)
    : kernel(uniform_param<T>({channels, 3, 3, 3}, 27, rng)), bias(uniform_param<T>({channels}, 27, rng)) {}

template <typename T>
Tensor<T> PatchEmbed<T>::forward(const Tensor<T>& image) const {
    if (image.rank() != 4 || image.dim(1) != 3)
        throw DimensionError("patch_embed expects [B,3,H,W], got " + to_string(image.shape()));
    if (image.dim(2) < 8 || image.dim(3) < 8)
        throw ContractError("patch_embed needs H,W >= 8, got " + to_string(image.shape()));
    return ops::conv2d(image, kernel, bias);
}

template <typename T>
void PatchEmbed<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix, "kernel", kernel);
    add_param(out, prefix, "bias", bias);
}

template <typename T>
TransformerBlock<T>::TransformerBlock(const BlockParams& params, Rng& rng) : params_(params) {
    params.validate();
    const std::size_t c = params.channels;
    const auto hidden = static_cast<std::size_t>(std::lround(params.expansion * static_cast<double>(c)));
    norm_attn = ChannelNorm<T>(c);
    qkv_kernel = uniform_param<T>({3 * c, c, 1, 1}, c, rng);
    qkv_bias = uniform_param<T>({3 * c}, c, rng);
    temperature = constant_param<T>({params.heads}, T{1});
    proj_kernel = uniform_param<T>({c, c, 1, 1}, c, rng);
    proj_bias = uniform_param<T>({c}, c, rng);
    norm_ffn = ChannelNorm<T>(c);
    ffn_in_kernel = uniform_param<T>({hidden, c, 1, 1}, c, rng);
    ffn_in_bias = uniform_param<T>({hidden}, c, rng);
    ffn_out_kernel = uniform_param<T>({c, hidden, 1, 1}, hidden, rng);
    ffn_out_bias = uniform_param<T>({c}, hidden, rng);
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != params_.channels)
        throw ConfigError("transformer block for " + std::to_string(params_.channels) + " channels got input " +
                          to_string(x.shape()));
    const std::size_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t heads = params_.heads, per_head = c / heads, area = h * w;

    const Tensor<T> normed = norm_attn.forward(x);
    const Tensor<T> qkv = ops::conv2d(normed, qkv_kernel, qkv_bias);
    auto head_view = [&](std::size_t which) {
        return ops::reshape(ops::slice(qkv, 1, which * c, c), {batch * heads, per_head, area});
    };
    const Tensor<T> q = ops::l2_normalize(head_view(0), T(1e-6));
    const Tensor<T> k = ops::l2_normalize(head_view(1), T(1e-6));
    const Tensor<T> v = head_view(2);

    Tensor<T> affinity = ops::reshape(ops::matmul(q, k, true), {batch, heads, per_head, per_head});
    affinity = ops::mul(affinity, ops::reshape(temperature, {1, heads, 1, 1}));
    const Tensor<T> attn = ops::softmax(affinity, 3);
    const Tensor<T> mixed =
        ops::reshape(ops::matmul(ops::reshape(attn, {batch * heads, per_head, per_head}), v), {batch, c, h, w});
    const Tensor<T> after_attn = ops::add(x, ops::conv2d(mixed, proj_kernel, proj_bias));

    const Tensor<T> hidden = ops::gelu(ops::conv2d(norm_ffn.forward(after_attn), ffn_in_kernel, ffn_in_bias));
    return ops::add(after_attn, ops::conv2d(hidden, ffn_out_kernel, ffn_out_bias));
}

template <typename T>
void TransformerBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    norm_attn.collect(prefix + ".norm_attn", out);
    add_param(out, prefix, "qkv_kernel", qkv_kernel);
    add_param(out, prefix, "qkv_bias", qkv_bias);
    add_param(out, prefix, "temperature", temperature);
    add_param(out, prefix, "proj_kernel", proj_kernel);
    add_param(out, prefix, "proj_bias", proj_bias);
    norm_ffn.collect(prefix + ".norm_ffn", out);
    add_param(out, prefix, "ffn_in_kernel", ffn_in_kernel);
    add_param(out, prefix, "ffn_in_bias", ffn_in_bias);
    add_param(out, prefix, "ffn_out_kernel", ffn_out_kernel);
    add_param(out, prefix, "ffn_out_bias", ffn_out_bias);
}

template <typename T>
void TransformerBlock<T>::zero_residual_branches() {
    for (Tensor<T>* t : {&proj_kernel, &proj_bias, &ffn_out_kernel, &ffn_out_bias})
        for (T& v : t->mutable_data()) v = T{0};
}

template <typename T>
Downsample<T>::Downsample(std::size_t channels, Rng& rng)
    : kernel(uniform_param<T>({2 * channels, channels, 3, 3}, 9 * channels, rng)),
      bias(uniform_param<T>({2 * channels}, 9 * channels, rng)) {}

template <typename T>
Tensor<T> Downsample<T>::forward(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
        throw ContractError("downsample needs even spatial extents, got " + to_string(x.shape()));
    return ops::conv2d(x, kernel, bias, {.stride = 2, .groups = 1, .padding = ops::Padding::same});
}

template <typename T>
void Downsample<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix, "kernel", kernel);
    add_param(out, prefix, "bias", bias);
}

template <typename T>
Upsample<T>::Upsample(std::size_t channels, Rng& rng) {
    if (channels % 2 != 0) throw ContractError("upsample needs an even channel count, got " + std::to_string(channels));
    kernel = uniform_param<T>({channels / 2, channels, 1, 1}, channels, rng);
    bias = uniform_param<T>({channels / 2}, channels, rng);
}

template <typename T>
Tensor<T> Upsample<T>::forward(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) % 2 != 0)
        throw ContractError("upsample needs an even channel count, got " + to_string(x.shape()));
    return ops::conv2d(ops::upsample_nearest2x(x), kernel, bias);
}

template <typename T>
void Upsample<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix, "kernel", kernel);
    add_param(out, prefix, "bias", bias);
}

template <typename T>
Pointwise<T>::Pointwise(std::size_t c_in, std::size_t c_out, Rng& rng)
    : kernel(uniform_param<T>({c_out, c_in, 1, 1}, c_in, rng)), bias(uniform_param<T>({c_out}, c_in, rng)) {}

template <typename T>
Tensor<T> Pointwise<T>::forward(const Tensor<T>& x) const {
    return ops::conv2d(x, kernel, bias);
}

template <typename T>
void Pointwise<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix, "kernel", kernel);
    add_param(out, prefix, "bias", bias);
}

template class ChannelNorm<float>;
template class ChannelNorm<double>;
template class PatchEmbed<float>;
template class PatchEmbed<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class Downsample<float>;
template class Downsample<double>;
template class Upsample<float>;
template class Upsample<double>;
template class Pointwise<float>;
template class Pointwise<double>;

}  // namespace m2r
