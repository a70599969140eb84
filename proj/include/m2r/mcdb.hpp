#pragma once

// Dual-branch bottleneck: a depthwise-conv branch for local detail and a
// selective state-space branch for global context, blended per pixel and
// channel by a gate conditioned on the degradation feature vector.

#include <cstddef>
#include <optional>
#include <string>

#include "m2r/nn_blocks.hpp"
#include "m2r/params.hpp"

namespace m2r {

// Diagonal selective SSM over C channels with S states per channel.
// A = -exp(A_log) is strictly negative; B_t, C_t and the step size
// delta_t = Softplus(u_t w_delta + b_delta) are projected from the input.
template <typename T>
struct SsmParams {
    Tensor<T> a_log;         // [C, S]
    Tensor<T> proj_b;        // [C, S]
    Tensor<T> proj_c;        // [C, S]
    Tensor<T> proj_delta;    // [C, 1]
    Tensor<T> delta_bias;    // [1]

    SsmParams() = default;
    SsmParams(std::size_t channels, std::size_t state, Rng& rng);
    std::size_t channels() const { return a_log.dim(0); }
    std::size_t state() const { return a_log.dim(1); }
    void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Fused scan primitive. u is [B, C, L], delta is [B, 1, L], a_log is [C, S],
// b and c are [B, S, L]. Computes, per channel c and state s,
//   h_t = exp(delta_t A) h_{t-1} + delta_t B_t u_t,   y_t = sum_s C_t h_t
// in one forward pass split into blocks of `chunk` steps: each block is
// scanned from a zero state alongside its running decay product, then the
// carried-in state is folded in. Memory is O(L C S) for the backward pass.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a_log, const Tensor<T>& b,
                         const Tensor<T>& c, std::size_t chunk = 64);

// Projects u [B, C, L] into delta, B_t and C_t and runs selective_scan.
template <typename T>
Tensor<T> ssm_scan(const Tensor<T>& u, const SsmParams<T>& p, std::size_t chunk = 64);

template <typename T>
struct GateParams {
    Tensor<T> proj_weight, proj_bias;  // P_f [F_p] -> C
    Tensor<T> conv_kernel, conv_bias;  // 1x1 conv [C, 2C]

    GateParams() = default;
    GateParams(std::size_t channels, std::size_t prior_width, Rng& rng);
    void collect(const std::string& prefix, ParamList<T>& out) const;
};

// F_cnn = GELU(DWConv3x3(LN(F)))
template <typename T>
class CnnBranch {
public:
    CnnBranch() = default;
    CnnBranch(std::size_t channels, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;

    ChannelNorm<T> norm;
    Tensor<T> dw_kernel, dw_bias;  // [C, 1, 3, 3]
};

// LN -> flatten row-major to [B, C, H*W] -> pointwise expansion to E*C
// channels -> scan -> LN -> pointwise projection back to C -> reshape.
template <typename T>
class MambaBranch {
public:
    MambaBranch() = default;
    MambaBranch(std::size_t channels, std::size_t state, std::size_t expand, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;

    ChannelNorm<T> norm_in;
    Tensor<T> in_weight, in_bias;    // [C, E*C]
    SsmParams<T> ssm;                // over E*C channels
    ChannelNorm<T> norm_out;         // E*C
    Tensor<T> out_weight, out_bias;  // [E*C, C]
};

// G = sigmoid(Conv1x1([F, proj(P_f)])), shape [B, C, H, W].
template <typename T>
Tensor<T> dgf_gate(const Tensor<T>& x, const Tensor<T>& prior_features, const GateParams<T>& g);

// G * F_cnn + (1 - G) * F_mamba, evaluated literally so G in {0, 1} selects a
// branch bit-exactly.
template <typename T>
Tensor<T> fuse(const Tensor<T>& gate, const Tensor<T>& cnn, const Tensor<T>& mamba);

struct McdbConfig {
    std::size_t channels = 64;
    std::size_t state = 8;
    std::size_t expand = 2;  // inner width of the scan branch, in multiples of C
    std::size_t prior_width = 64;
    // When set, the learned gate is replaced by this constant (0.5 gives the
    // static-averaging ablation).
    std::optional<double> fixed_gate;
};

template <typename T>
class Mcdb {
public:
    Mcdb() = default;
    Mcdb(const McdbConfig& config, Rng& rng);

    // prior_features is [B, F_p].
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& prior_features) const;

    // Returns both branch outputs and the gate used, for inspection.
    struct Parts {
        Tensor<T> cnn, mamba, gate, out;
    };
    Parts forward_parts(const Tensor<T>& x, const Tensor<T>& prior_features,
                        std::optional<double> forced_gate = std::nullopt) const;

    void collect(const std::string& prefix, ParamList<T>& out) const;
    const McdbConfig& config() const { return config_; }

    CnnBranch<T> cnn;
    MambaBranch<T> mamba;
    GateParams<T> gate;

private:
    McdbConfig config_;
};

}  // namespace m2r
