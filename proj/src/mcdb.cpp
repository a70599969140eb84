#include "m2r/mcdb.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "m2r/autograd.hpp"
#include "m2r/errors.hpp"
#include "m2r/simd/kernels.hpp"

namespace m2r {

template <typename T>
SsmParams<T>::SsmParams(std::size_t channels, std::size_t state, Rng& rng) {
    if (channels == 0 || state == 0) throw ConfigError("SSM needs positive channel and state counts");
    // A = -(1..S) per channel.
    std::vector<T> logs(channels * state);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t s = 0; s < state; ++s) logs[c * state + s] = static_cast<T>(std::log(static_cast<double>(s + 1)));
    a_log = Tensor<T>({channels, state}, std::move(logs));
    a_log.set_requires_grad(true);
    proj_b = uniform_param<T>({channels, state}, channels, rng);
    proj_c = uniform_param<T>({channels, state}, channels, rng);
    proj_delta = uniform_param<T>({channels, 1}, channels, rng);
    // Softplus(bias) = 0.05 at initialization.
    delta_bias = constant_param<T>({1}, static_cast<T>(std::log(std::expm1(0.05))));
}

template <typename T>
void SsmParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix, "a_log", a_log);
    add_param(out, prefix, "proj_b", proj_b);
    add_param(out, prefix, "proj_c", proj_c);
    add_param(out, prefix, "proj_delta", proj_delta);
    add_param(out, prefix, "delta_bias", delta_bias);
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a_log, const Tensor<T>& b,
                         const Tensor<T>& c, std::size_t chunk) {
    if (u.rank() != 3 || delta.rank() != 3 || a_log.rank() != 2 || b.rank() != 3 || c.rank() != 3)
        throw DimensionError("selective_scan expects u [B,C,L], delta [B,1,L], A [C,S], B/C [B,S,L]");
    const std::size_t batch = u.dim(0), channels = u.dim(1), length = u.dim(2), state = a_log.dim(1);
    if (a_log.dim(0) != channels || delta.shape() != Shape{batch, 1, length} || b.shape() != Shape{batch, state, length} ||
        c.shape() != Shape{batch, state, length})
        throw DimensionError("selective_scan: inconsistent shapes u " + to_string(u.shape()) + " delta " +
                             to_string(delta.shape()) + " A " + to_string(a_log.shape()) + " B " + to_string(b.shape()) +
                             " C " + to_string(c.shape()));
    if (chunk == 0) throw ConfigError("selective_scan: chunk must be positive");

    const std::size_t cs = channels * state;
    auto decay_rate = std::make_shared<std::vector<T>>(cs);  // A = -exp(A_log)
    for (std::size_t i = 0; i < cs; ++i) (*decay_rate)[i] = -std::exp(a_log.data()[i]);
    // Every hidden state is kept for the backward pass: [B, L, C*S].
    auto history = std::make_shared<std::vector<T>>(batch * length * cs);

    Tensor<T> out({batch, channels, length});
    auto y = out.mutable_data();
    const auto ud = u.data(), dd = delta.data(), bd = b.data(), cd = c.data();
    const auto& kt = simd::active<T>();
    std::vector<T> carry(cs), local(cs), prod(cs), decay(cs), input(cs);

    for (std::size_t n = 0; n < batch; ++n) {
        std::fill(carry.begin(), carry.end(), T{0});
        for (std::size_t start = 0; start < length; start += chunk) {
            const std::size_t stop = std::min(length, start + chunk);
            std::fill(local.begin(), local.end(), T{0});
            std::fill(prod.begin(), prod.end(), T{1});
            for (std::size_t t = start; t < stop; ++t) {
                const T dt = dd[n * length + t];
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    const T drive = dt * ud[(n * channels + ch) * length + t];
                    for (std::size_t s = 0; s < state; ++s) {
                        const std::size_t i = ch * state + s;
                        decay[i] = std::exp(dt * (*decay_rate)[i]);
                        input[i] = drive * bd[(n * state + s) * length + t];
                        prod[i] *= decay[i];
                    }
                }
                kt.decay_acc(decay.data(), input.data(), local.data(), cs);
                T* h = history->data() + (n * length + t) * cs;
                std::copy(local.begin(), local.end(), h);
                kt.mul_acc(prod.data(), carry.data(), h, cs);
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    T acc = 0;
                    for (std::size_t s = 0; s < state; ++s) acc += cd[(n * state + s) * length + t] * h[ch * state + s];
                    y[(n * channels + ch) * length + t] = acc;
                }
            }
            const T* last = history->data() + (n * length + stop - 1) * cs;
            std::copy(last, last + cs, carry.begin());
        }
    }

    if (autograd::needs_grad<T>({&u, &delta, &a_log, &b, &c})) {
        autograd::record(out, [u, delta, a_log, b, c, decay_rate, history, batch, channels, length,
                               state](std::span<const T> gy) mutable {
            auto gu = autograd::grad_of(u);
            auto gd = autograd::grad_of(delta);
            auto ga = autograd::grad_of(a_log);
            auto gb = autograd::grad_of(b);
            auto gc = autograd::grad_of(c);
            const auto ud = u.data(), dd = delta.data(), bd = b.data(), cd = c.data();
            const std::size_t cs = channels * state;
            const std::vector<T>& rate = *decay_rate;
            std::vector<T> g(cs);  // dL/dh_t
            for (std::size_t n = 0; n < batch; ++n) {
                std::fill(g.begin(), g.end(), T{0});
                for (std::size_t t = length; t-- > 0;) {
                    const T dt = dd[n * length + t];
                    const T* h = history->data() + (n * length + t) * cs;
                    const T* h_prev = t > 0 ? history->data() + (n * length + t - 1) * cs : nullptr;
                    T d_delta = 0;
                    for (std::size_t ch = 0; ch < channels; ++ch) {
                        const T dy = gy[(n * channels + ch) * length + t];
                        const T ut = ud[(n * channels + ch) * length + t];
                        T d_u = 0;
                        for (std::size_t s = 0; s < state; ++s) {
                            const std::size_t i = ch * state + s;
                            const std::size_t bs = (n * state + s) * length + t;
                            g[i] += dy * cd[bs];
                            if (!gc.empty()) gc[bs] += dy * h[i];
                            const T a = std::exp(dt * rate[i]);
                            const T hp = h_prev ? h_prev[i] : T{0};
                            const T d_decay = g[i] * hp * a;  // dL/d(dt * A) through exp
                            d_delta += d_decay * rate[i] + g[i] * bd[bs] * ut;
                            if (!ga.empty()) ga[i] += d_decay * dt * rate[i];
                            if (!gb.empty()) gb[bs] += g[i] * dt * ut;
                            d_u += g[i] * dt * bd[bs];
                            g[i] *= a;
                        }
                        if (!gu.empty()) gu[(n * channels + ch) * length + t] += d_u;
                    }
                    if (!gd.empty()) gd[n * length + t] += d_delta;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> ssm_scan(const Tensor<T>& u, const SsmParams<T>& p, std::size_t chunk) {
    if (u.rank() != 3 || u.dim(1) != p.channels())
        throw DimensionError("ssm_scan: input " + to_string(u.shape()) + " for " + std::to_string(p.channels()) +
                             " channels");
    const Tensor<T> delta = ops::softplus(ops::channel_linear(u, p.proj_delta, p.delta_bias));
    const Tensor<T> b = ops::channel_linear(u, p.proj_b);
    const Tensor<T> c = ops::channel_linear(u, p.proj_c);
    return selective_scan(u, delta, p.a_log, b, c, chunk);
}

template <typename T>
GateParams<T>::GateParams(std::size_t channels, std::size_t prior_width, Rng& rng)
    : proj_weight(uniform_param<T>({prior_width, channels}, prior_width, rng)),
      proj_bias(constant_param<T>({channels}, T{0})),
      conv_kernel(uniform_param<T>({channels, 2 * channels, 1, 1}, 2 * channels, rng)),
      conv_bias(constant_param<T>({channels}, T{0})) {}

template <typename T>
void GateParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    add_param(out, prefix, "proj_weight", proj_weight);
    add_param(out, prefix, "proj_bias", proj_bias);
    add_param(out, prefix, "conv_kernel", conv_kernel);
    add_param(out, prefix, "conv_bias", conv_bias);
}

template <typename T>
CnnBranch<T>::CnnBranch(std::size_t channels, Rng& rng)
    : norm(channels), dw_kernel(uniform_param<T>({channels, 1, 3, 3}, 9, rng)),
      dw_bias(uniform_param<T>({channels}, 9, rng)) {}

template <typename T>
Tensor<T> CnnBranch<T>::forward(const Tensor<T>& x) const {
    const ops::Conv2dOptions depthwise{.stride = 1, .groups = x.dim(1), .padding = ops::Padding::same};
    return ops::gelu(ops::conv2d(norm.forward(x), dw_kernel, dw_bias, depthwise));
}

template <typename T>
void CnnBranch<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    norm.collect(prefix + ".norm", out);
    add_param(out, prefix, "dw_kernel", dw_kernel);
    add_param(out, prefix, "dw_bias", dw_bias);
}

template <typename T>
MambaBranch<T>::MambaBranch(std::size_t channels, std::size_t state, std::size_t expand, Rng& rng)
    : norm_in(channels),
      in_weight(uniform_param<T>({channels, expand * channels}, channels, rng)),
      in_bias(constant_param<T>({expand * channels}, T{0})),
      ssm(expand * channels, state, rng),
      norm_out(expand * channels),
      out_weight(uniform_param<T>({expand * channels, channels}, expand * channels, rng)),
      out_bias(constant_param<T>({channels}, T{0})) {
    if (expand == 0) throw ConfigError("mamba branch expansion must be positive");
}

template <typename T>
Tensor<T> MambaBranch<T>::forward(const Tensor<T>& x) const {
    if (x.rank() != 4) throw DimensionError("mamba branch expects [B,C,H,W], got " + to_string(x.shape()));
    const std::size_t batch = x.dim(0), channels = x.dim(1), length = x.dim(2) * x.dim(3);
    const Tensor<T> seq = ops::reshape(norm_in.forward(x), {batch, channels, length});
    const Tensor<T> inner = ops::channel_linear(seq, in_weight, in_bias);
    const Tensor<T> scanned = norm_out.forward(ssm_scan(inner, ssm));
    return ops::reshape(ops::channel_linear(scanned, out_weight, out_bias), x.shape());
}

template <typename T>
void MambaBranch<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    norm_in.collect(prefix + ".norm_in", out);
    add_param(out, prefix, "in_weight", in_weight);
    add_param(out, prefix, "in_bias", in_bias);
    ssm.collect(prefix + ".ssm", out);
    norm_out.collect(prefix + ".norm_out", out);
    add_param(out, prefix, "out_weight", out_weight);
    add_param(out, prefix, "out_bias", out_bias);
}

template <typename T>
Tensor<T> dgf_gate(const Tensor<T>& x, const Tensor<T>& prior_features, const GateParams<T>& g) {
    if (x.rank() != 4 || prior_features.rank() != 2 || prior_features.dim(0) != x.dim(0))
        throw DimensionError("dgf_gate: features " + to_string(x.shape()) + " with prior " +
                             to_string(prior_features.shape()));
    const std::size_t batch = x.dim(0), channels = x.dim(1);
    const Tensor<T> projected =
        ops::reshape(ops::linear(prior_features, g.proj_weight, g.proj_bias), {batch, channels, 1, 1});
    const Tensor<T> joint = ops::concat<T>({x, ops::broadcast_to(projected, x.shape())}, 1);
    return ops::sigmoid(ops::conv2d(joint, g.conv_kernel, g.conv_bias));
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& gate, const Tensor<T>& cnn, const Tensor<T>& mamba) {
    const Tensor<T> complement = ops::add_scalar(ops::mul_scalar(gate, T{-1}), T{1});
    return ops::add(ops::mul(gate, cnn), ops::mul(complement, mamba));
}

template <typename T>
Mcdb<T>::Mcdb(const McdbConfig& config, Rng& rng)
    : cnn(config.channels, rng), mamba(config.channels, config.state, config.expand, rng), config_(config) {
    if (!config.fixed_gate) gate = GateParams<T>(config.channels, config.prior_width, rng);
}

template <typename T>
typename Mcdb<T>::Parts Mcdb<T>::forward_parts(const Tensor<T>& x, const Tensor<T>& prior_features,
                                                std::optional<double> forced_gate) const {
    Parts parts;
    parts.cnn = cnn.forward(x);
    parts.mamba = mamba.forward(x);
    const std::optional<double> constant = forced_gate ? forced_gate : config_.fixed_gate;
    parts.gate = constant ? Tensor<T>::full(x.shape(), static_cast<T>(*constant)) : dgf_gate(x, prior_features, gate);
    parts.out = fuse(parts.gate, parts.cnn, parts.mamba);
    return parts;
}

template <typename T>
Tensor<T> Mcdb<T>::forward(const Tensor<T>& x, const Tensor<T>& prior_features) const {
    return forward_parts(x, prior_features).out;
}

template <typename T>
void Mcdb<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    cnn.collect(prefix + ".cnn", out);
    mamba.collect(prefix + ".mamba", out);
    if (!config_.fixed_gate) gate.collect(prefix + ".gate", out);
}

#define M2R_INSTANTIATE_MCDB(T)                                                                                   \
    template struct SsmParams<T>;                                                                                 \
    template struct GateParams<T>;                                                                                \
    template class CnnBranch<T>;                                                                                  \
    template class MambaBranch<T>;                                                                                \
    template class Mcdb<T>;                                                                                       \
    template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                      const Tensor<T>&, std::size_t);                                             \
    template Tensor<T> ssm_scan(const Tensor<T>&, const SsmParams<T>&, std::size_t);                              \
    template Tensor<T> dgf_gate(const Tensor<T>&, const Tensor<T>&, const GateParams<T>&);                        \
    template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

M2R_INSTANTIATE_MCDB(float)
M2R_INSTANTIATE_MCDB(double)

#undef M2R_INSTANTIATE_MCDB

}  // namespace m2r
