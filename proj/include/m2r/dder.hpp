#pragma once

// Degradation-aware dynamic expert router: joint prompt/feature scoring with
// a prior-driven bias, input-dependent noisy perturbation during training,
// per-pixel sparse Top-K selection and dispatch to a bank of experts.

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "m2r/params.hpp"

namespace m2r {

enum class Mode { train, infer };

struct RouterConfig {
    std::size_t channels = 16;      // d
    std::size_t prompt_width = 16;  // M
    std::size_t classes = 5;        // D
    std::size_t experts = 4;        // N
    std::size_t top_k = 2;          // K
    double expert_expansion = 2.0;

    void validate() const;
};

template <typename T>
struct RouterParams {
    Tensor<T> prompt_weight, prompt_bias;  // [M, d], [d]: T_task -> d channels
    Tensor<T> gate_weight;                 // W_g [2d, N]
    Tensor<T> bias_weight;                 // W_b [D, N]
    Tensor<T> noise_weight;                // W_n [2d, N]
    Tensor<T> alpha;                       // [N]
    std::size_t top_k = 2;
    std::size_t experts = 4;

    RouterParams() = default;
    RouterParams(const RouterConfig& config, Rng& rng);
    void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Per-pass routing diagnostics. Every map is [B, N, H, W]; row (b, p) of the
// flattened P x N table is the expert vector of pixel p in image b.
template <typename T>
struct RoutingState {
    Tensor<T> score;    // x_p W_g
    Tensor<T> bias;     // d_g W_b, broadcast over pixels
    Tensor<T> S;        // score + alpha * bias
    Tensor<T> sigma;    // Softplus(x_p W_n)
    Tensor<T> S_tilde;  // perturbed scores
    std::vector<std::uint8_t> eps_mask;  // length N, all zero in inference
    Tensor<T> Se;       // sparse weights, K nonzeros per pixel

    std::size_t batch() const { return Se.dim(0); }
    std::size_t experts() const { return Se.dim(1); }
    std::size_t positions() const { return Se.numel() / (Se.dim(0) * Se.dim(1)); }
    double weight(std::size_t b, std::size_t p, std::size_t n) const;

    // CSV table with header "image,pixel,expert,score,bias,S,sigma,S_tilde,Se",
    // one row per (image, pixel, expert).
    void write_csv(std::ostream& out) const;
};

// Residual pointwise expert: x + W2 GELU(W1 x).
template <typename T>
struct Expert {
    Tensor<T> in_kernel, in_bias;    // [h, d, 1, 1]
    Tensor<T> out_kernel, out_bias;  // [d, h, 1, 1]

    Tensor<T> forward(const Tensor<T>& x) const;
};

template <typename T>
class ExpertBank {
public:
    ExpertBank() = default;
    ExpertBank(std::size_t experts, std::size_t channels, double expansion, Rng& rng);

    std::size_t size() const { return experts_.size(); }
    const Expert<T>& operator[](std::size_t n) const { return experts_.at(n); }
    Expert<T>& operator[](std::size_t n) { return experts_.at(n); }
    void collect(const std::string& prefix, ParamList<T>& out) const;

private:
    std::vector<Expert<T>> experts_;
};

// [B, d, H, W] and T_task [B, M] -> [B, 2d, H, W]: x minus its per-image
// channel means, followed by the projected prompt broadcast over pixels.
template <typename T>
Tensor<T> joint_features(const Tensor<T>& x, const Tensor<T>& task_prompt, const RouterParams<T>& p);

// Fills score, bias and S of `state` from x_p [B, 2d, H, W] and d_g [B, D].
template <typename T>
void route_scores(const Tensor<T>& joint, const Tensor<T>& class_probs, const RouterParams<T>& p,
                  RoutingState<T>& state);

// Fills sigma, eps_mask and S_tilde. In inference S_tilde is S itself.
// Training draws one Bernoulli(0.5) mask per expert and unit normals per
// entry from `rng`.
template <typename T>
void perturb(const Tensor<T>& joint, const RouterParams<T>& p, Mode mode, Rng& rng, RoutingState<T>& state);

// Per pixel (axis 1 of [B, N, ...]): keep the K largest entries, softmax over
// them, zero the rest. Ties go to the lower expert index. Gradients reach
// only kept entries.
template <typename T>
Tensor<T> sparse_select(const Tensor<T>& scores, std::size_t k);

// y(i) = sum_n Se(i, n) F_n(x)(i). Each expert runs only on the pixels that
// selected it; experts no pixel selected are skipped.
template <typename T>
Tensor<T> dispatch(const Tensor<T>& x, const Tensor<T>& weights, const ExpertBank<T>& bank);

template <typename T>
class Dder {
public:
    Dder() = default;
    Dder(const RouterConfig& config, Rng& rng);

    // Returns the restored features; diagnostics land in `state`.
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& task_prompt, const Tensor<T>& class_probs, Mode mode,
                      Rng& rng, RoutingState<T>& state) const;

    void collect(const std::string& prefix, ParamList<T>& out) const;
    const RouterConfig& config() const { return config_; }

    RouterParams<T> router;
    ExpertBank<T> bank;

private:
    RouterConfig config_;
};

}  // namespace m2r
