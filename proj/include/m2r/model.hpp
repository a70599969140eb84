#pragma once

// Full restoration network: patch embedding, an encoder of transformer levels
// each closed by an expert router, a dual-branch bottleneck, and a decoder
// that mirrors the encoder with skip connections. The output is a correction
// added to the input image.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "m2r/dder.hpp"
#include "m2r/mcdb.hpp"
#include "m2r/nn_blocks.hpp"
#include "m2r/prompt_prior.hpp"

namespace m2r {

// Ablation topologies.
//   full       everything
//   no_dgf     bottleneck branches averaged with a constant 0.5 gate
//   no_dder    every router replaced by a transformer block
//   dder_only  the bottleneck dual-branch block replaced by a transformer block
enum class Variant { full, no_dgf, no_dder, dder_only };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);  // ConfigError on unknown names

struct ModelConfig {
    std::vector<std::size_t> channels{16, 32, 64};  // per level; each doubles the previous
    std::vector<std::size_t> blocks{1, 2, 2};       // encoder transformer blocks per level
    std::size_t decoder_blocks = 1;
    std::size_t heads = 1;
    double expansion = 1.0;  // transformer feed-forward ratio

    std::size_t experts = 4;  // N
    std::size_t top_k = 2;    // K
    double expert_expansion = 2.0;

    std::size_t prompts = 8;        // C_p
    std::size_t prompt_width = 16;  // M
    std::size_t prompt_hidden = 16;
    std::size_t classes = 5;       // D
    std::size_t prior_width = 64;  // F_p

    std::size_t ssm_state = 8;
    std::size_t ssm_expand = 2;

    double lambda = 0.01;     // balance-loss weight
    double eps_stab = 1e-10;  // balance-loss stabilizer

    Variant variant = Variant::full;

    std::size_t levels() const { return channels.size(); }
    // Input height and width must be multiples of this.
    std::size_t spatial_multiple() const { return std::size_t{1} << (levels() - 1); }
    void validate() const;
};

template <typename T>
struct ForwardResult {
    Tensor<T> restored;
    std::vector<RoutingState<T>> diagnostics;  // one per router, encoder order
};

template <typename T>
class Model {
public:
    Model(const ModelConfig& config, std::uint64_t seed);

    // images [B, 3, H, W]; prior.class_probs [B, D], prior.features [B, F_p].
    ForwardResult<T> forward(const Tensor<T>& images, const PriorBatch<T>& prior, Mode mode, Rng& rng) const;

    // Named trainable tensors in a fixed order; handles share storage with
    // the model.
    ParamList<T> parameters() const;
    const ModelConfig& config() const { return config_; }

    // Decoder refinement slot, applied after each decoder level's blocks.
    // Unset means identity.
    std::function<Tensor<T>(const Tensor<T>&, std::size_t level)> refinement_hook;

    struct EncoderLevel {
        std::vector<TransformerBlock<T>> blocks;
        std::optional<Dder<T>> router;
        std::optional<TransformerBlock<T>> router_stand_in;
        std::optional<Downsample<T>> down;
    };
    struct DecoderLevel {
        Upsample<T> up;
        Pointwise<T> merge;  // concatenated skip (2C) -> C
        std::vector<TransformerBlock<T>> blocks;
    };

    PromptGenerator<T> prompt;
    PatchEmbed<T> embed;
    std::vector<EncoderLevel> encoder;
    std::optional<Mcdb<T>> bottleneck;
    std::optional<TransformerBlock<T>> bottleneck_stand_in;
    std::vector<DecoderLevel> decoder;  // deepest first
    Tensor<T> head_kernel, head_bias;   // 3x3, C_0 -> 3, zero-initialized

private:
    ModelConfig config_;
};

// Constructs the topology selected by config.variant.
template <typename T>
Model<T> build_variant(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    return Model<T>(config, seed);
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace m2r
