#include "m2r/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "m2r/errors.hpp"
#include "m2r/losses.hpp"

namespace m2r {

template <typename T>
AdamState<T>::AdamState(const ParamList<T>& params) {
    for (const auto& p : params) {
        m.emplace_back(p.tensor.numel(), T{0});
        v.emplace_back(p.tensor.numel(), T{0});
    }
}

template <typename T>
void adam_update(const ParamList<T>& params, AdamState<T>& state, const AdamConfig& config) {
    if (state.m.size() != params.size()) throw ContractError("adam_update: optimizer state does not match parameters");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(config.beta1, t)));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(config.beta2, t)));
    const T lr = static_cast<T>(config.lr), eps = static_cast<T>(config.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> p = params[i].tensor;
        const auto g = p.ensure_grad();
        const auto w = p.mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (T{1} - b1) * g[j];
            v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
            w[j] -= lr * (m[j] * c1) / (std::sqrt(v[j] * c2) + eps);
        }
    }
}

void TrainConfig::validate() const {
    if (micro_batch == 0 || accumulation == 0) throw ConfigError("train: micro_batch and accumulation must be >= 1");
    if (!(adam.lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
        throw ConfigError("train: Adam betas must lie in [0, 1)");
    if (!(adam.eps > 0.0)) throw ConfigError("train: Adam eps must be > 0");
    if (checkpoint_every == 0) throw ConfigError("train: checkpoint_every must be >= 1");
}

std::string StepMetrics::csv_header(std::size_t experts) {
    std::string out = "step,l1,balance,total,lr";
    for (std::size_t e = 0; e < experts; ++e) out += ",usage_" + std::to_string(e);
    return out;
}

std::string StepMetrics::csv_row() const {
    std::ostringstream out;
    out.precision(9);
    out << step << ',' << l1 << ',' << balance << ',' << total << ',' << lr;
    for (double u : usage) out << ',' << static_cast<std::uint64_t>(u);
    return out.str();
}

namespace {

Image flipped(const Image& img, bool horizontal, bool vertical) {
    Image out(img.height, img.width);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x)
                out.at(c, y, x) = img.at(c, vertical ? img.height - 1 - y : y, horizontal ? img.width - 1 - x : x);
    return out;
}

std::string batch_ids(std::span<const Sample> batch) {
    std::string out;
    for (const auto& s : batch) out += (out.empty() ? "" : ",") + s.id;
    return out;
}

template <typename T>
bool all_finite(std::span<const T> values) {
    for (T v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

std::vector<Sample> draw_batch(std::span<const Sample> pool, const TrainConfig& config, Rng& rng) {
    if (pool.empty()) throw ContractError("draw_batch: empty sample pool");
    std::vector<Sample> batch;
    batch.reserve(config.batch_size());
    for (std::size_t i = 0; i < config.batch_size(); ++i) {
        Sample s = pool[static_cast<std::size_t>(rng() % pool.size())];
        if (config.flips) {
            const auto bits = rng();
            const bool h = bits & 1u, v = bits & 2u;
            if (h || v) {
                s.clean = flipped(s.clean, h, v);
                s.degraded = flipped(s.degraded, h, v);
            }
        }
        batch.push_back(std::move(s));
    }
    return batch;
}

template <typename T>
Tensor<T> sample_images(std::span<const Sample> samples, bool degraded) {
    std::vector<const Image*> images;
    for (const auto& s : samples) images.push_back(degraded ? &s.degraded : &s.clean);
    return stack_images<T>(images);
}

template <typename T>
StepMetrics train_step(const Model<T>& model, const PriorProvider<T>& prior, std::span<const Sample> batch,
                       AdamState<T>& opt, const TrainConfig& config, Rng& rng, std::uint64_t batch_id) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    const ParamList<T> params = model.parameters();
    for (auto p : params) p.tensor.zero_grad();

    StepMetrics metrics;
    metrics.step = opt.step + 1;
    metrics.lr = config.adam.lr;
    const Mode mode = config.router_noise ? Mode::train : Mode::infer;
    const double lambda = model.config().lambda, eps_stab = model.config().eps_stab;

    for (std::size_t start = 0; start < batch.size(); start += config.micro_batch) {
        const auto micro = batch.subspan(start, std::min(config.micro_batch, batch.size() - start));
        const double weight = static_cast<double>(micro.size()) / static_cast<double>(batch.size());
        std::vector<std::size_t> labels;
        for (const auto& s : micro) labels.push_back(s.label);
        const Tensor<T> degraded = sample_images<T>(micro, true);
        const Tensor<T> clean = sample_images<T>(micro, false);
        const auto priors = prior.infer(degraded, labels);
        const PriorBatch<T> prior_batch = stack_priors<T>(priors);

        Tape tape;
        TapeScope scope(tape);
        ForwardResult<T> out;
        try {
            out = model.forward(degraded, prior_batch, mode, rng);
        } catch (const DegenerateAxisError& e) {
            throw NumericError("non-finite activations at step " + std::to_string(metrics.step) + " (batch " +
                               std::to_string(batch_id) + ": " + batch_ids(micro) + "): " + e.what());
        }
        const Tensor<T> l1 = loss_l1(out.restored, clean);
        Tensor<T> balance;
        if (!out.diagnostics.empty())
            balance = loss_balance<T>(std::span<const RoutingState<T>>(out.diagnostics), eps_stab);
        const Tensor<T> total = loss_total(l1, balance, lambda);
        if (!std::isfinite(static_cast<double>(total.item())))
            throw NumericError("non-finite loss at step " + std::to_string(metrics.step) + " (batch " +
                               std::to_string(batch_id) + ": " + batch_ids(micro) + ")");
        Tensor<T> scaled = ops::mul_scalar(total, static_cast<T>(weight));
        tape.backward(scaled);

        metrics.l1 += weight * static_cast<double>(l1.item());
        if (balance.defined()) metrics.balance += weight * static_cast<double>(balance.item());
        metrics.total += weight * static_cast<double>(total.item());
        const auto usage = usage_histogram<T>(std::span<const RoutingState<T>>(out.diagnostics));
        if (metrics.usage.empty()) metrics.usage.assign(usage.size(), 0.0);
        for (std::size_t e = 0; e < usage.size(); ++e) metrics.usage[e] += usage[e];
    }

    for (const auto& p : params)
        if (p.tensor.has_grad() && !all_finite(p.tensor.grad()))
            throw NumericError("non-finite gradient for " + p.name + " at step " + std::to_string(metrics.step) +
                               " (batch " + std::to_string(batch_id) + ": " + batch_ids(batch) + ")");
    adam_update(params, opt, config.adam);
    return metrics;
}

template <typename T>
double prior_accuracy(const PriorProvider<T>& prior, std::span<const Sample> samples) {
    if (samples.empty()) return 0.0;
    std::size_t correct = 0;
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < samples.size(); start += kChunk) {
        const auto chunk = samples.subspan(start, std::min(kChunk, samples.size() - start));
        std::vector<std::size_t> labels;
        for (const auto& s : chunk) labels.push_back(s.label);
        const auto priors = prior.infer(sample_images<T>(chunk, true), labels);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const auto& p = priors[i].class_probs;
            const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
            if (best == chunk[i].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

template <typename T>
double train_prior(LearnedPrior<T>& prior, std::span<const Sample> samples, const PriorTrainConfig& config,
                   Rng& rng) {
    if (samples.empty()) throw ContractError("train_prior: no samples");
    ParamList<T> params;
    prior.collect("", params);
    AdamState<T> opt(params);
    AdamConfig adam;
    adam.lr = config.lr;
    for (std::size_t step = 0; step < config.steps; ++step) {
        std::vector<Sample> batch;
        std::vector<std::size_t> labels;
        for (std::size_t i = 0; i < config.batch; ++i) {
            batch.push_back(samples[static_cast<std::size_t>(rng() % samples.size())]);
            labels.push_back(batch.back().label);
        }
        for (auto p : params) p.tensor.zero_grad();
        Tape tape;
        TapeScope scope(tape);
        Tensor<T> loss = cross_entropy(prior.logits(sample_images<T>(batch, true)), labels);
        if (!std::isfinite(static_cast<double>(loss.item())))
            throw NumericError("non-finite prior loss at step " + std::to_string(step + 1));
        tape.backward(loss);
        adam_update(params, opt, adam);
    }
    prior.mark_trained();
    return prior_accuracy<T>(prior, samples);
}

template <typename T>
void store_params(Checkpoint& ckpt, const std::string& prefix, const ParamList<T>& params) {
    for (const auto& p : params) ckpt.put_tensor<T>(prefix + "/" + p.name, p.tensor);
}

template <typename T>
void load_params(const Checkpoint& ckpt, const std::string& prefix, const ParamList<T>& params) {
    std::vector<std::vector<T>> values;
    for (const auto& p : params) values.push_back(ckpt.tensor_values<T>(prefix + "/" + p.name, p.tensor.shape()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> t = params[i].tensor;
        std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
    }
}

template <typename T>
void store_adam(Checkpoint& ckpt, const ParamList<T>& params, const AdamState<T>& state) {
    if (state.m.size() != params.size()) throw ContractError("store_adam: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        ckpt.put_tensor<T>("adam.m/" + params[i].name, params[i].tensor.shape(), state.m[i]);
        ckpt.put_tensor<T>("adam.v/" + params[i].name, params[i].tensor.shape(), state.v[i]);
    }
    ckpt.put_u64("adam.step", state.step);
}

template <typename T>
AdamState<T> load_adam(const Checkpoint& ckpt, const ParamList<T>& params) {
    AdamState<T> state;
    for (const auto& p : params) {
        state.m.push_back(ckpt.tensor_values<T>("adam.m/" + p.name, p.tensor.shape()));
        state.v.push_back(ckpt.tensor_values<T>("adam.v/" + p.name, p.tensor.shape()));
    }
    state.step = ckpt.get_u64("adam.step");
    return state;
}

std::string rng_state(const Rng& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
    std::istringstream in(state);
    Rng restored;
    in >> restored;
    if (in.fail()) throw FormatError("malformed random-generator state");
    rng = restored;
}

#define M2R_INSTANTIATE_TRAIN(T)                                                                              \
    template struct AdamState<T>;                                                                             \
    template void adam_update(const ParamList<T>&, AdamState<T>&, const AdamConfig&);                         \
    template Tensor<T> sample_images(std::span<const Sample>, bool);                                          \
    template StepMetrics train_step(const Model<T>&, const PriorProvider<T>&, std::span<const Sample>,        \
                                    AdamState<T>&, const TrainConfig&, Rng&, std::uint64_t);                  \
    template double train_prior(LearnedPrior<T>&, std::span<const Sample>, const PriorTrainConfig&, Rng&);    \
    template double prior_accuracy(const PriorProvider<T>&, std::span<const Sample>);                         \
    template void store_params(Checkpoint&, const std::string&, const ParamList<T>&);                         \
    template void load_params(const Checkpoint&, const std::string&, const ParamList<T>&);                    \
    template void store_adam(Checkpoint&, const ParamList<T>&, const AdamState<T>&);                          \
    template AdamState<T> load_adam(const Checkpoint&, const ParamList<T>&);

M2R_INSTANTIATE_TRAIN(float)
M2R_INSTANTIATE_TRAIN(double)

#undef M2R_INSTANTIATE_TRAIN

}  // namespace m2r
