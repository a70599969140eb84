#include "m2r/model.hpp"

#include "m2r/errors.hpp"

namespace m2r {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_dgf: return "no_dgf";
        case Variant::no_dder: return "no_dder";
        case Variant::dder_only: return "dder_only";
    }
    return "full";
}

Variant variant_from_string(const std::string& name) {
    for (Variant v : {Variant::full, Variant::no_dgf, Variant::no_dder, Variant::dder_only})
        if (to_string(v) == name) return v;
    throw ConfigError("unknown variant '" + name + "' (expected full, no_dgf, no_dder or dder_only)");
}

void ModelConfig::validate() const {
    if (channels.empty()) throw ConfigError("model needs at least one level");
    if (blocks.size() != channels.size())
        throw ConfigError("model: " + std::to_string(blocks.size()) + " block counts for " +
                          std::to_string(channels.size()) + " levels");
    for (std::size_t i = 0; i + 1 < channels.size(); ++i)
        if (channels[i + 1] != 2 * channels[i]) throw ConfigError("model: each level must double the channel count");
    for (std::size_t c : channels)
        if (c == 0 || c % heads != 0) throw ConfigError("model: channels must be positive multiples of heads");
    if (!(expansion >= 1.0)) throw ConfigError("model: expansion must be >= 1");
    if (top_k < 1 || top_k > experts) throw ConfigError("model: need 1 <= top_k <= experts");
    if (prompts < 2 || prompt_width == 0 || prompt_hidden < 2) throw ConfigError("model: invalid prompt settings");
    if (classes < 2 || prior_width == 0) throw ConfigError("model: invalid prior settings");
    if (ssm_state == 0 || ssm_expand == 0) throw ConfigError("model: invalid SSM settings");
    if (!(lambda >= 0.0)) throw ConfigError("model: lambda must be >= 0");
    if (!(eps_stab > 0.0)) throw ConfigError("model: eps_stab must be > 0");
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config.validate();
    Rng rng(seed);
    const auto block_params = [&](std::size_t c) { return BlockParams{c, config.expansion, config.heads}; };

    prompt = PromptGenerator<T>(PromptConfig{config.prompts, config.prompt_width, config.prompt_hidden}, rng);
    embed = PatchEmbed<T>(config.channels.front(), rng);

    const std::size_t levels = config.levels();
    for (std::size_t i = 0; i < levels; ++i) {
        const std::size_t c = config.channels[i];
        EncoderLevel level;
        for (std::size_t j = 0; j < config.blocks[i]; ++j) level.blocks.emplace_back(block_params(c), rng);
        if (config.variant == Variant::no_dder) {
            level.router_stand_in.emplace(block_params(c), rng);
        } else {
            level.router.emplace(RouterConfig{c, config.prompt_width, config.classes, config.experts, config.top_k,
                                              config.expert_expansion},
                                 rng);
        }
        if (i + 1 < levels) level.down.emplace(c, rng);
        encoder.push_back(std::move(level));
    }

    const std::size_t deepest = config.channels.back();
    if (config.variant == Variant::dder_only) {
        bottleneck_stand_in.emplace(block_params(deepest), rng);
    } else {
        McdbConfig mc;
        mc.channels = deepest;
        mc.state = config.ssm_state;
        mc.expand = config.ssm_expand;
        mc.prior_width = config.prior_width;
        if (config.variant == Variant::no_dgf) mc.fixed_gate = 0.5;
        bottleneck.emplace(mc, rng);
    }

    for (std::size_t i = levels - 1; i-- > 0;) {
        const std::size_t c = config.channels[i];
        DecoderLevel level{Upsample<T>(2 * c, rng), Pointwise<T>(2 * c, c, rng), {}};
        for (std::size_t j = 0; j < config.decoder_blocks; ++j) level.blocks.emplace_back(block_params(c), rng);
        decoder.push_back(std::move(level));
    }

    head_kernel = constant_param<T>({3, config.channels.front(), 3, 3}, T{0});
    head_bias = constant_param<T>({3}, T{0});
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& images, const PriorBatch<T>& prior, Mode mode, Rng& rng) const {
    if (images.rank() != 4 || images.dim(1) != 3)
        throw DimensionError("model expects images [B,3,H,W], got " + to_string(images.shape()));
    const std::size_t multiple = config_.spatial_multiple();
    if (images.dim(2) % multiple != 0 || images.dim(3) % multiple != 0)
        throw ContractError("model input " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                            " is not a multiple of " + std::to_string(multiple));
    const std::size_t batch = images.dim(0);
    if (prior.class_probs.shape() != Shape{batch, config_.classes} ||
        prior.features.shape() != Shape{batch, config_.prior_width})
        throw DimensionError("model prior shapes " + to_string(prior.class_probs.shape()) + " / " +
                             to_string(prior.features.shape()) + " do not match batch " + std::to_string(batch));

    ForwardResult<T> result;
    Tensor<T> task;
    if (config_.variant != Variant::no_dder) task = prompt.task_prompt(prompt.prompt_weights(images));

    Tensor<T> x = embed.forward(images);
    std::vector<Tensor<T>> skips;
    for (const EncoderLevel& level : encoder) {
        for (const auto& block : level.blocks) x = block.forward(x);
        if (level.router) {
            RoutingState<T> state;
            x = level.router->forward(x, task, prior.class_probs, mode, rng, state);
            result.diagnostics.push_back(std::move(state));
        } else {
            x = level.router_stand_in->forward(x);
        }
        if (level.down) {
            skips.push_back(x);
            x = level.down->forward(x);
        }
    }

    if (bottleneck)
        x = ops::add(x, bottleneck->forward(x, prior.features));
    else
        x = bottleneck_stand_in->forward(x);

    for (std::size_t i = 0; i < decoder.size(); ++i) {
        const DecoderLevel& level = decoder[i];
        const std::size_t depth = encoder.size() - 2 - i;
        x = level.up.forward(x);
        x = level.merge.forward(ops::concat<T>({x, skips[depth]}, 1));
        for (const auto& block : level.blocks) x = block.forward(x);
        if (refinement_hook) x = refinement_hook(x, depth);
    }

    result.restored = ops::add(images, ops::conv2d(x, head_kernel, head_bias));
    return result;
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
    ParamList<T> out;
    prompt.collect("prompt", out);
    embed.collect("embed", out);
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        const EncoderLevel& level = encoder[i];
        const std::string prefix = "enc" + std::to_string(i);
        for (std::size_t j = 0; j < level.blocks.size(); ++j)
            level.blocks[j].collect(prefix + ".block" + std::to_string(j), out);
        if (level.router) level.router->collect(prefix + ".router", out);
        if (level.router_stand_in) level.router_stand_in->collect(prefix + ".router_block", out);
        if (level.down) level.down->collect(prefix + ".down", out);
    }
    if (bottleneck) bottleneck->collect("bottleneck", out);
    if (bottleneck_stand_in) bottleneck_stand_in->collect("bottleneck_block", out);
    for (std::size_t i = 0; i < decoder.size(); ++i) {
        const DecoderLevel& level = decoder[i];
        const std::string prefix = "dec" + std::to_string(encoder.size() - 2 - i);
        level.up.collect(prefix + ".up", out);
        level.merge.collect(prefix + ".merge", out);
        for (std::size_t j = 0; j < level.blocks.size(); ++j)
            level.blocks[j].collect(prefix + ".block" + std::to_string(j), out);
    }
    add_param(out, "head", "kernel", head_kernel);
    add_param(out, "head", "bias", head_bias);
    return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace m2r
