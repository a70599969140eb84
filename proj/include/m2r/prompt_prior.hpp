#pragma once

// Task-prompt generation from image content and the degradation-prior
// providers that condition routing (class probabilities d_g) and gated
// fusion (feature vector P_f).

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "m2r/params.hpp"

namespace m2r {

struct PromptConfig {
    std::size_t prompts = 8;   // library rows C_p
    std::size_t width = 16;    // prompt width M
    std::size_t hidden = 16;   // channels of the pooled conv features
};

// Learnable base prompts, one row per prompt.
template <typename T>
struct PromptLibrary {
    Tensor<T> tau;  // [C_p, M]
};

// q = softmax(W_l GAP(Convs(I))); T_task = GELU(q tau).
template <typename T>
class PromptGenerator {
public:
    PromptGenerator() = default;
    PromptGenerator(const PromptConfig& config, Rng& rng);

    // [B, 3, H, W] -> [B, C_p], rows sum to one.
    Tensor<T> prompt_weights(const Tensor<T>& image) const;
    // [B, C_p] -> [B, M]
    Tensor<T> task_prompt(const Tensor<T>& weights) const;
    Tensor<T> forward(const Tensor<T>& image) const { return task_prompt(prompt_weights(image)); }

    void collect(const std::string& prefix, ParamList<T>& out) const;
    const PromptConfig& config() const { return config_; }

    Tensor<T> conv1_kernel, conv1_bias;  // 3 -> hidden/2, stride 2
    Tensor<T> conv2_kernel, conv2_bias;  // hidden/2 -> hidden, stride 2
    Tensor<T> proj_weight, proj_bias;    // [hidden, C_p]
    PromptLibrary<T> library;

private:
    PromptConfig config_;
};

template <typename T>
Tensor<T> task_prompt(const Tensor<T>& weights, const PromptLibrary<T>& library);

// Degradation classes of the desk corpus. The last class stands for any
// degradation the provider does not recognize.
enum class Degradation : std::uint8_t { rain = 0, snow = 1, haze = 2, raindrop = 3, unknown = 4 };
inline constexpr std::size_t kDegradationClasses = 5;

std::string to_string(Degradation d);
// Throws ConfigError on an unrecognized name.
Degradation degradation_from_string(const std::string& name);

struct DegradationPrior {
    std::vector<double> class_probs;  // d_g, length D
    std::vector<double> features;     // P_f, length F_p
};

// Batched form consumed by the network: d_g is [B, D], P_f is [B, F_p].
template <typename T>
struct PriorBatch {
    Tensor<T> class_probs;
    Tensor<T> features;
};

template <typename T>
PriorBatch<T> stack_priors(std::span<const DegradationPrior> priors);

// A provider maps an image (and, for the oracle, its label) to a prior.
// Implementations are read-only once built and safe to share between
// concurrent inference passes.
template <typename T>
class PriorProvider {
public:
    virtual ~PriorProvider() = default;
    // images is [B, 3, H, W]; labels has B entries.
    virtual std::vector<DegradationPrior> infer(const Tensor<T>& images, std::span<const std::size_t> labels) const = 0;
    virtual std::size_t classes() const = 0;
    virtual std::size_t feature_width() const = 0;
};

// Test double: smoothed one-hot class probabilities and a fixed, seeded
// embedding per class.
template <typename T>
class OraclePrior final : public PriorProvider<T> {
public:
    OraclePrior(std::size_t classes, std::size_t feature_width, std::uint64_t seed, double smoothing = 0.02);

    DegradationPrior prior(std::size_t label) const;
    std::vector<DegradationPrior> infer(const Tensor<T>& images, std::span<const std::size_t> labels) const override;
    std::size_t classes() const override { return classes_; }
    std::size_t feature_width() const override { return feature_width_; }
    std::uint64_t seed() const { return seed_; }

private:
    std::size_t classes_;
    std::size_t feature_width_;
    std::uint64_t seed_;
    double smoothing_;
    std::vector<std::vector<double>> embeddings_;
};

// Small conv classifier. The RGB input is stacked with a fixed high-pass copy
// (image minus its 3x3 mean) so thin streaks and flakes stand out, then runs
// through a full-resolution 3x3 conv + GELU stage and four stride-2 ones,
// global average pooling to P_f, a linear layer and softmax to d_g.
template <typename T>
class LearnedPrior final : public PriorProvider<T> {
public:
    LearnedPrior(std::size_t classes, std::size_t feature_width, Rng& rng);

    // Differentiable forward used for training: returns logits [B, D] and
    // sets `features` to the pooled penultimate activations [B, F_p].
    Tensor<T> logits(const Tensor<T>& images, Tensor<T>* features = nullptr) const;

    // Throws UninitializedError until mark_trained() was called.
    std::vector<DegradationPrior> infer(const Tensor<T>& images, std::span<const std::size_t> labels) const override;
    std::size_t classes() const override { return classes_; }
    std::size_t feature_width() const override { return feature_width_; }

    bool trained() const { return trained_; }
    void mark_trained() { trained_ = true; }

    void collect(const std::string& prefix, ParamList<T>& out) const;

    std::vector<Tensor<T>> conv_kernels, conv_biases;
    Tensor<T> head_weight, head_bias;

private:
    std::size_t classes_;
    std::size_t feature_width_;
    bool trained_ = false;
};

}  // namespace m2r
