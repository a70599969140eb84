#include "m2r/dder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "m2r/autograd.hpp"
#include "m2r/errors.hpp"

namespace m2r {

void RouterConfig::validate() const {
    if (channels == 0 || prompt_width == 0 || classes == 0) throw ConfigError("router extents must be positive");
    if (top_k < 1 || top_k > experts)
        throw ConfigError("router needs 1 <= K <= N, got K=" + std::to_string(top_k) + " N=" + std::to_string(experts));
    if (!(expert_expansion >= 1.0)) throw ConfigError("expert expansion must be >= 1");
}

template <typename T>
RouterParams<T>::RouterParams(const RouterConfig& config, Rng& rng) : top_k(config.top_k), experts(config.experts) {
    config.validate();
    const std::size_t d = config.channels, n = config.experts;
    prompt_weight = uniform_param<T>({config.prompt_width, d}, config.prompt_width, rng);
    prompt_bias = constant_param<T>({d}, T{0});
    gate_weight = uniform_param<T>({2 * d, n}, 2 * d, rng);
    bias_weight = uniform_param<T>({config.classes, n}, config.classes, rng);
    noise_weight = uniform_param<T>({2 * d, n}, 2 * d, rng);
    alpha = constant_param<T>({n}, T{1});
}

template <typename T>
void RouterParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix, "prompt_weight", prompt_weight);
    add_param(out, prefix, "prompt_bias", prompt_bias);
    add_param(out, prefix, "gate_weight", gate_weight);
    add_param(out, prefix, "bias_weight", bias_weight);
    add_param(out, prefix, "noise_weight", noise_weight);
    add_param(out, prefix, "alpha", alpha);
}

template <typename T>
double RoutingState<T>::weight(std::size_t b, std::size_t p, std::size_t n) const {
    return static_cast<double>(Se.data()[(b * experts() + n) * positions() + p]);
}

template <typename T>
void RoutingState<T>::write_csv(std::ostream& out) const {
    out << "image,pixel,expert,score,bias,S,sigma,S_tilde,Se\n";
    const std::size_t n_exp = experts(), area = positions();
    for (std::size_t b = 0; b < batch(); ++b)
        for (std::size_t p = 0; p < area; ++p)
            for (std::size_t n = 0; n < n_exp; ++n) {
                const std::size_t i = (b * n_exp + n) * area + p;
                out << b << ',' << p << ',' << n << ',' << score.data()[i] << ',' << bias.data()[i] << ','
                    << S.data()[i] << ',' << sigma.data()[i] << ',' << S_tilde.data()[i] << ',' << Se.data()[i] << '\n';
            }
}

template <typename T>
Tensor<T> Expert<T>::forward(const Tensor<T>& x) const {
    const Tensor<T> hidden = ops::gelu(ops::conv2d(x, in_kernel, in_bias));
    return ops::add(x, ops::conv2d(hidden, out_kernel, out_bias));
}

template <typename T>
ExpertBank<T>::ExpertBank(std::size_t experts, std::size_t channels, double expansion, Rng& rng) {
    const auto hidden = static_cast<std::size_t>(std::lround(expansion * static_cast<double>(channels)));
    for (std::size_t n = 0; n < experts; ++n) {
        Expert<T> e;
        e.in_kernel = uniform_param<T>({hidden, channels, 1, 1}, channels, rng);
        e.in_bias = uniform_param<T>({hidden}, channels, rng);
        e.out_kernel = uniform_param<T>({channels, hidden, 1, 1}, hidden, rng);
        e.out_bias = uniform_param<T>({channels}, hidden, rng);
        experts_.push_back(std::move(e));
    }
}

template <typename T>
void ExpertBank<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t n = 0; n < experts_.size(); ++n) {
        const std::string p = prefix + ".expert" + std::to_string(n);
        add_param(out, p, "in_kernel", experts_[n].in_kernel);
        add_param(out, p, "in_bias", experts_[n].in_bias);
        add_param(out, p, "out_kernel", experts_[n].out_kernel);
        add_param(out, p, "out_bias", experts_[n].out_bias);
    }
}

template <typename T>
Tensor<T> joint_features(const Tensor<T>& x, const Tensor<T>& task_prompt, const RouterParams<T>& p) {
    if (x.rank() != 4 || task_prompt.rank() != 2 || task_prompt.dim(0) != x.dim(0))
        throw DimensionError("joint_features: x " + to_string(x.shape()) + " with prompt " +
                             to_string(task_prompt.shape()));
    const std::size_t batch = x.dim(0), d = x.dim(1);
    if (p.prompt_weight.dim(1) != d)
        throw DimensionError("joint_features: router built for " + std::to_string(p.prompt_weight.dim(1)) +
                             " channels, input has " + std::to_string(d));
    const Tensor<T> projected = ops::reshape(ops::linear(task_prompt, p.prompt_weight, p.prompt_bias), {batch, d, 1, 1});
    const T inv_area = static_cast<T>(1.0 / static_cast<double>(x.dim(2) * x.dim(3)));
    const Tensor<T> centred = ops::sub(x, ops::mul_scalar(ops::sum_to(x, {batch, d, 1, 1}), inv_area));
    return ops::concat<T>({centred, ops::broadcast_to(projected, x.shape())}, 1);
}

template <typename T>
void route_scores(const Tensor<T>& joint, const Tensor<T>& class_probs, const RouterParams<T>& p,
                  RoutingState<T>& state) {
    if (class_probs.rank() != 2 || class_probs.dim(0) != joint.dim(0) || class_probs.dim(1) != p.bias_weight.dim(0))
        throw DimensionError("route_scores: d_g " + to_string(class_probs.shape()) + " does not fit W_b " +
                             to_string(p.bias_weight.shape()));
    const std::size_t batch = joint.dim(0), n = p.experts;
    state.score = ops::channel_linear(joint, p.gate_weight);
    const Tensor<T> prior_bias = ops::reshape(ops::linear(class_probs, p.bias_weight), {batch, n, 1, 1});
    state.bias = ops::broadcast_to(prior_bias, state.score.shape());
    state.S = ops::add(state.score, ops::mul(ops::reshape(p.alpha, {1, n, 1, 1}), state.bias));
}

template <typename T>
void perturb(const Tensor<T>& joint, const RouterParams<T>& p, Mode mode, Rng& rng, RoutingState<T>& state) {
    const std::size_t n = p.experts;
    state.sigma = ops::softplus(ops::channel_linear(joint, p.noise_weight));
    state.eps_mask.assign(n, 0);
    if (mode == Mode::infer) {
        state.S_tilde = state.S;
        return;
    }
    std::bernoulli_distribution coin(0.5);
    for (auto& m : state.eps_mask) m = coin(rng) ? 1 : 0;
    std::normal_distribution<double> unit(0.0, 1.0);
    Tensor<T> noise(state.S.shape());
    const std::size_t area = noise.numel() / (noise.dim(0) * n);
    auto z = noise.mutable_data();
    for (std::size_t i = 0; i < z.size(); ++i) {
        const T draw = static_cast<T>(unit(rng));
        z[i] = state.eps_mask[(i / area) % n] ? draw : T{0};
    }
    // eps * N(0, sigma^2) == eps * sigma * z keeps sigma differentiable.
    state.S_tilde = ops::add(state.S, ops::mul(state.sigma, noise));
}

template <typename T>
Tensor<T> sparse_select(const Tensor<T>& scores, std::size_t k) {
    if (scores.rank() < 2) throw DimensionError("sparse_select expects [B, N, ...] scores");
    const std::size_t batch = scores.dim(0), n = scores.dim(1);
    if (k < 1 || k > n) throw ConfigError("sparse_select needs 1 <= K <= N");
    const std::size_t area = scores.numel() / (batch * n);
    Tensor<T> out(scores.shape());
    auto y = out.mutable_data();
    const auto s = scores.data();
    std::vector<std::size_t> order(n);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t p = 0; p < area; ++p) {
            const std::size_t base = b * n * area + p;
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t i, std::size_t j) { return s[base + i * area] > s[base + j * area]; });
            const T peak = s[base + order[0] * area];
            T total = 0;
            for (std::size_t r = 0; r < k; ++r) {
                const T e = std::exp(s[base + order[r] * area] - peak);
                y[base + order[r] * area] = e;
                total += e;
            }
            for (std::size_t r = 0; r < k; ++r) y[base + order[r] * area] /= total;
        }
    if (autograd::needs_grad<T>({&scores})) {
        autograd::record(out, [scores, out, batch, n, area](std::span<const T> gy) mutable {
            auto gx = autograd::grad_of(scores);
            const auto y = out.data();
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t p = 0; p < area; ++p) {
                    const std::size_t base = b * n * area + p;
                    T inner = 0;
                    for (std::size_t e = 0; e < n; ++e) inner += y[base + e * area] * gy[base + e * area];
                    for (std::size_t e = 0; e < n; ++e) {
                        const std::size_t i = base + e * area;
                        // Dropped entries carry y == 0 and receive nothing.
                        gx[i] += y[i] * (gy[i] - inner);
                    }
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> dispatch(const Tensor<T>& x, const Tensor<T>& weights, const ExpertBank<T>& bank) {
    if (x.rank() != 4 || weights.rank() != 4 || weights.dim(0) != x.dim(0) || weights.dim(1) != bank.size() ||
        weights.dim(2) != x.dim(2) || weights.dim(3) != x.dim(3))
        throw DimensionError("dispatch: weights " + to_string(weights.shape()) + " do not fit features " +
                             to_string(x.shape()) + " and " + std::to_string(bank.size()) + " experts");
    const std::size_t batch = x.dim(0), n = bank.size(), area = x.dim(2) * x.dim(3);
    const auto w = weights.data();
    Tensor<T> y;
    std::vector<std::size_t> positions;
    for (std::size_t e = 0; e < n; ++e) {
        positions.clear();
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t p = 0; p < area; ++p)
                if (w[(b * n + e) * area + p] != T{0}) positions.push_back(b * area + p);
        if (positions.empty()) continue;
        const Tensor<T> routed = bank[e].forward(ops::gather_positions(x, positions));
        const Tensor<T> gate = ops::gather_positions(ops::slice(weights, 1, e, 1), positions);
        const Tensor<T> part = ops::scatter_positions(ops::mul(routed, gate), positions, x.shape());
        y = y.defined() ? ops::add(y, part) : part;
    }
    if (!y.defined()) return Tensor<T>(x.shape());
    return y;
}

template <typename T>
Dder<T>::Dder(const RouterConfig& config, Rng& rng)
    : router(config, rng), bank(config.experts, config.channels, config.expert_expansion, rng), config_(config) {}

template <typename T>
Tensor<T> Dder<T>::forward(const Tensor<T>& x, const Tensor<T>& task_prompt, const Tensor<T>& class_probs, Mode mode,
                           Rng& rng, RoutingState<T>& state) const {
    const Tensor<T> joint = joint_features(x, task_prompt, router);
    route_scores(joint, class_probs, router, state);
    perturb(joint, router, mode, rng, state);
    state.Se = sparse_select(state.S_tilde, router.top_k);
    return dispatch(x, state.Se, bank);
}

template <typename T>
void Dder<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    router.collect(prefix + ".router", out);
    bank.collect(prefix + ".bank", out);
}

#define M2R_INSTANTIATE_DDER(T)                                                                                 \
    template struct RouterParams<T>;                                                                            \
    template struct RoutingState<T>;                                                                            \
    template struct Expert<T>;                                                                                  \
    template class ExpertBank<T>;                                                                               \
    template class Dder<T>;                                                                                     \
    template Tensor<T> joint_features(const Tensor<T>&, const Tensor<T>&, const RouterParams<T>&);              \
    template void route_scores(const Tensor<T>&, const Tensor<T>&, const RouterParams<T>&, RoutingState<T>&);   \
    template void perturb(const Tensor<T>&, const RouterParams<T>&, Mode, Rng&, RoutingState<T>&);              \
    template Tensor<T> sparse_select(const Tensor<T>&, std::size_t);                                            \
    template Tensor<T> dispatch(const Tensor<T>&, const Tensor<T>&, const ExpertBank<T>&);

M2R_INSTANTIATE_DDER(float)
M2R_INSTANTIATE_DDER(double)

#undef M2R_INSTANTIATE_DDER

}  // namespace m2r
