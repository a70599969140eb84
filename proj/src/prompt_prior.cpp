#include "m2r/prompt_prior.hpp"

#include <algorithm>
#include <random>

#include "m2r/errors.hpp"

namespace m2r {

namespace {
constexpr ops::Conv2dOptions kStride2{.stride = 2, .groups = 1, .padding = ops::Padding::same};
}

template <typename T>
PromptGenerator<T>::PromptGenerator(const PromptConfig& config, Rng& rng) : config_(config) {
    if (config.prompts < 2) throw ConfigError("prompt library needs at least 2 prompts");
    if (config.width == 0 || config.hidden < 2) throw ConfigError("prompt width and hidden channels must be positive");
    const std::size_t mid = config.hidden / 2;
    conv1_kernel = uniform_param<T>({mid, 3, 3, 3}, 27, rng);
    conv1_bias = uniform_param<T>({mid}, 27, rng);
    conv2_kernel = uniform_param<T>({config.hidden, mid, 3, 3}, 9 * mid, rng);
    conv2_bias = uniform_param<T>({config.hidden}, 9 * mid, rng);
    proj_weight = uniform_param<T>({config.hidden, config.prompts}, config.hidden, rng);
    proj_bias = constant_param<T>({config.prompts}, T{0});
    library.tau = uniform_param<T>({config.prompts, config.width}, 1, rng);
}

template <typename T>
Tensor<T> PromptGenerator<T>::prompt_weights(const Tensor<T>& image) const {
    const Tensor<T> f1 = ops::gelu(ops::conv2d(image, conv1_kernel, conv1_bias, kStride2));
    const Tensor<T> f2 = ops::gelu(ops::conv2d(f1, conv2_kernel, conv2_bias, kStride2));
    return ops::softmax(ops::linear(ops::global_avg_pool(f2), proj_weight, proj_bias), 1);
}

template <typename T>
Tensor<T> PromptGenerator<T>::task_prompt(const Tensor<T>& weights) const {
    return m2r::task_prompt(weights, library);
}

template <typename T>
void PromptGenerator<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix, "conv1_kernel", conv1_kernel);
    add_param(out, prefix, "conv1_bias", conv1_bias);
    add_param(out, prefix, "conv2_kernel", conv2_kernel);
    add_param(out, prefix, "conv2_bias", conv2_bias);
    add_param(out, prefix, "proj_weight", proj_weight);
    add_param(out, prefix, "proj_bias", proj_bias);
    add_param(out, prefix, "tau", library.tau);
}

template <typename T>
Tensor<T> task_prompt(const Tensor<T>& weights, const PromptLibrary<T>& library) {
    if (weights.rank() != 2 || library.tau.rank() != 2 || weights.dim(1) != library.tau.dim(0))
        throw DimensionError("task_prompt: weights " + to_string(weights.shape()) + " vs library " +
                             to_string(library.tau.shape()));
    return ops::gelu(ops::linear(weights, library.tau));
}

std::string to_string(Degradation d) {
    switch (d) {
        case Degradation::rain: return "rain";
        case Degradation::snow: return "snow";
        case Degradation::haze: return "haze";
        case Degradation::raindrop: return "raindrop";
        case Degradation::unknown: return "unknown";
    }
    return "unknown";
}

Degradation degradation_from_string(const std::string& name) {
    for (std::size_t i = 0; i < kDegradationClasses; ++i) {
        const auto d = static_cast<Degradation>(i);
        if (to_string(d) == name) return d;
    }
    throw ConfigError("unknown degradation type '" + name + "'");
}

template <typename T>
PriorBatch<T> stack_priors(std::span<const DegradationPrior> priors) {
    if (priors.empty()) throw ContractError("stack_priors: empty batch");
    const std::size_t classes = priors.front().class_probs.size();
    const std::size_t width = priors.front().features.size();
    std::vector<T> probs, feats;
    probs.reserve(priors.size() * classes);
    feats.reserve(priors.size() * width);
    for (const auto& p : priors) {
        if (p.class_probs.size() != classes || p.features.size() != width)
            throw DimensionError("stack_priors: inconsistent prior widths");
        for (double v : p.class_probs) probs.push_back(static_cast<T>(v));
        for (double v : p.features) feats.push_back(static_cast<T>(v));
    }
    return {Tensor<T>({priors.size(), classes}, std::move(probs)), Tensor<T>({priors.size(), width}, std::move(feats))};
}

template <typename T>
OraclePrior<T>::OraclePrior(std::size_t classes, std::size_t feature_width, std::uint64_t seed, double smoothing)
    : classes_(classes), feature_width_(feature_width), seed_(seed), smoothing_(smoothing) {
    if (classes < 2) throw ConfigError("oracle prior needs at least 2 classes");
    if (smoothing < 0.0 || smoothing * static_cast<double>(classes - 1) >= 1.0)
        throw ConfigError("oracle prior smoothing out of range");
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    embeddings_.assign(classes, std::vector<double>(feature_width));
    for (auto& row : embeddings_)
        for (double& v : row) v = dist(rng);
}

template <typename T>
DegradationPrior OraclePrior<T>::prior(std::size_t label) const {
    const std::size_t cls = std::min(label, classes_ - 1);
    DegradationPrior out;
    out.class_probs.assign(classes_, smoothing_);
    out.class_probs[cls] = 1.0 - smoothing_ * static_cast<double>(classes_ - 1);
    out.features = embeddings_[cls];
    return out;
}

template <typename T>
std::vector<DegradationPrior> OraclePrior<T>::infer(const Tensor<T>& images, std::span<const std::size_t> labels) const {
    if (images.defined() && images.dim(0) != labels.size())
        throw DimensionError("oracle prior: batch of " + std::to_string(images.dim(0)) + " images with " +
                             std::to_string(labels.size()) + " labels");
    std::vector<DegradationPrior> out;
    out.reserve(labels.size());
    for (std::size_t label : labels) out.push_back(prior(label));
    return out;
}

template <typename T>
LearnedPrior<T>::LearnedPrior(std::size_t classes, std::size_t feature_width, Rng& rng)
    : classes_(classes), feature_width_(feature_width) {
    if (classes < 2 || feature_width == 0) throw ConfigError("learned prior needs >= 2 classes and a feature width");
    const std::size_t widths[] = {6, 16, 16, 32, 32, feature_width};
    for (std::size_t i = 0; i < 5; ++i) {
        const std::size_t fan_in = 9 * widths[i];
        conv_kernels.push_back(uniform_param<T>({widths[i + 1], widths[i], 3, 3}, fan_in, rng));
        conv_biases.push_back(uniform_param<T>({widths[i + 1]}, fan_in, rng));
    }
    head_weight = uniform_param<T>({feature_width, classes}, feature_width, rng);
    head_bias = constant_param<T>({classes}, T{0});
}

template <typename T>
Tensor<T> LearnedPrior<T>::logits(const Tensor<T>& images, Tensor<T>* features) const {
    if (images.rank() != 4 || images.dim(1) != 3)
        throw DimensionError("learned prior expects images [B,3,H,W], got " + to_string(images.shape()));
    // Detail channels: image minus its 3x3 box mean, amplified.
    Tensor<T> box({3, 1, 3, 3});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 9; ++i) box.mutable_data()[c * 9 + i] = (i == 4 ? T{4} : T{0}) - T{4} / T{9};
    const Tensor<T> detail = ops::conv2d(images, box, {}, {.stride = 1, .groups = 3, .padding = ops::Padding::same});
    Tensor<T> x = ops::concat<T>({images, detail}, 1);
    for (std::size_t i = 0; i < conv_kernels.size(); ++i)
        x = ops::gelu(ops::conv2d(x, conv_kernels[i], conv_biases[i], i == 0 ? ops::Conv2dOptions{} : kStride2));
    const Tensor<T> pooled = ops::global_avg_pool(x);
    if (features != nullptr) *features = pooled;
    return ops::linear(pooled, head_weight, head_bias);
}

template <typename T>
std::vector<DegradationPrior> LearnedPrior<T>::infer(const Tensor<T>& images, std::span<const std::size_t>) const {
    if (!trained_) throw UninitializedError("learned degradation prior used before training");
    NoGradScope no_grad;
    Tensor<T> features;
    const Tensor<T> probs = ops::softmax(logits(images, &features), 1);
    const std::size_t batch = images.dim(0);
    std::vector<DegradationPrior> out(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        out[b].class_probs.assign(probs.data().begin() + b * classes_, probs.data().begin() + (b + 1) * classes_);
        out[b].features.assign(features.data().begin() + b * feature_width_,
                               features.data().begin() + (b + 1) * feature_width_);
    }
    return out;
}

template <typename T>
void LearnedPrior<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
        add_param(out, prefix, "conv" + std::to_string(i) + "_kernel", conv_kernels[i]);
        add_param(out, prefix, "conv" + std::to_string(i) + "_bias", conv_biases[i]);
    }
    add_param(out, prefix, "head_weight", head_weight);
    add_param(out, prefix, "head_bias", head_bias);
}

template class PromptGenerator<float>;
template class PromptGenerator<double>;
template Tensor<float> task_prompt(const Tensor<float>&, const PromptLibrary<float>&);
template Tensor<double> task_prompt(const Tensor<double>&, const PromptLibrary<double>&);
template PriorBatch<float> stack_priors(std::span<const DegradationPrior>);
template PriorBatch<double> stack_priors(std::span<const DegradationPrior>);
template class OraclePrior<float>;
template class OraclePrior<double>;
template class LearnedPrior<float>;
template class LearnedPrior<double>;

}  // namespace m2r
