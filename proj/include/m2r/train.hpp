#pragma once

// Optimizer, one accumulated training step, batch sampling, fitting of the
// learned degradation prior, and the checkpoint layout of a training run.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "m2r/checkpoint.hpp"
#include "m2r/corpus.hpp"
#include "m2r/model.hpp"

namespace m2r {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First and second moments, one buffer per parameter in ParamList order.
template <typename T>
struct AdamState {
    std::uint64_t step = 0;
    std::vector<std::vector<T>> m, v;

    explicit AdamState(const ParamList<T>& params = {});
};

// Bias-corrected Adam update from the gradients currently held by params. A
// parameter that received no gradient is treated as having a zero gradient.
template <typename T>
void adam_update(const ParamList<T>& params, AdamState<T>& state, const AdamConfig& config);

struct TrainConfig {
    AdamConfig adam;
    std::size_t micro_batch = 2;
    std::size_t accumulation = 4;  // micro-steps per optimizer step
    std::size_t steps = 2000;
    bool router_noise = true;  // noisy gating during training
    bool flips = true;         // random horizontal / vertical flips
    std::size_t checkpoint_every = 500;

    std::size_t batch_size() const { return micro_batch * accumulation; }
    void validate() const;
};

struct StepMetrics {
    std::uint64_t step = 0;
    double l1 = 0.0, balance = 0.0, total = 0.0, lr = 0.0;
    std::vector<double> usage;  // expert activation counts, summed over routers

    // "step,l1,balance,total,lr,usage_0,...".
    static std::string csv_header(std::size_t experts);
    std::string csv_row() const;
};

// Draws batch_size samples uniformly with replacement, flipped at random
// when enabled. Consumes rng deterministically.
std::vector<Sample> draw_batch(std::span<const Sample> pool, const TrainConfig& config, Rng& rng);

// Splits the batch into micro-batches of config.micro_batch, accumulates the
// gradient of the size-weighted mean loss, then applies one Adam update.
// NumericError (naming batch_id and the sample ids) on a non-finite loss or
// gradient; parameters are left untouched in that case.
template <typename T>
StepMetrics train_step(const Model<T>& model, const PriorProvider<T>& prior, std::span<const Sample> batch,
                       AdamState<T>& opt, const TrainConfig& config, Rng& rng, std::uint64_t batch_id);

struct PriorTrainConfig {
    std::size_t steps = 500;
    std::size_t batch = 16;
    double lr = 2e-3;
};

// Fits the classifier with cross-entropy on degraded images and marks it
// trained. Returns accuracy on `samples`.
template <typename T>
double train_prior(LearnedPrior<T>& prior, std::span<const Sample> samples, const PriorTrainConfig& config,
                   Rng& rng);

// Fraction of samples whose argmax class equals the label.
template <typename T>
double prior_accuracy(const PriorProvider<T>& prior, std::span<const Sample> samples);

// Checkpoint records "<prefix>/<name>" for every parameter.
template <typename T>
void store_params(Checkpoint& ckpt, const std::string& prefix, const ParamList<T>& params);
// Copies values into the parameter tensors; FormatError on a missing record
// or shape mismatch.
template <typename T>
void load_params(const Checkpoint& ckpt, const std::string& prefix, const ParamList<T>& params);

template <typename T>
void store_adam(Checkpoint& ckpt, const ParamList<T>& params, const AdamState<T>& state);
template <typename T>
AdamState<T> load_adam(const Checkpoint& ckpt, const ParamList<T>& params);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);  // FormatError on garbage

// [B, 3, H, W] of the degraded (or clean) images.
template <typename T>
Tensor<T> sample_images(std::span<const Sample> samples, bool degraded);

}  // namespace m2r
