#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "m2r/checkpoint.hpp"
#include "m2r/commands.hpp"
#include "m2r/errors.hpp"

namespace {

struct Overrides {
    std::optional<std::size_t> steps;
    std::optional<std::string> variant;
    std::optional<std::uint64_t> seed;

    void apply(m2r::RunConfig& config) const {
        if (steps) config.override_value("train.steps", std::to_string(*steps));
        if (variant) config.override_value("model.variant", *variant);
        if (seed) config.override_value("seed", std::to_string(*seed));
    }
};

m2r::RunConfig load_config(const std::string& path) {
    return path.empty() ? m2r::RunConfig::parse("") : m2r::RunConfig::load(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"m2r: all-in-one weather restoration at desk scale"};
    app.require_subcommand(1);

    std::string config_path, out_dir, resume, checkpoint, split, image_in, image_out;
    bool force = false;
    Overrides overrides;

    auto* gen = app.add_subcommand("gen", "Synthesize the paired corpus");
    gen->add_option("--config", config_path, "Run configuration file");
    gen->add_option("--out", out_dir, "Corpus directory")->required();
    gen->add_flag("--force", force, "Overwrite a non-empty output directory");

    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--config", config_path, "Run configuration file");
    train->add_option("--out", out_dir, "Run directory")->required();
    train->add_option("--steps", overrides.steps, "Override train.steps");
    train->add_option("--variant", overrides.variant, "Override model.variant (full, no_dgf, no_dder, dder_only)");
    train->add_option("--seed", overrides.seed, "Override seed");
    train->add_option("--resume", resume, "Continue from a checkpoint (its stored configuration is used)");
    train->add_flag("--force", force, "Train into a non-empty output directory");

    auto* eval = app.add_subcommand("eval", "Score a checkpoint on a corpus split");
    eval->add_option("checkpoint", checkpoint)->required();
    eval->add_option("split", split, "Split directory, e.g. corpus/val")->required();
    eval->add_option("--out", out_dir, "Report directory (default: next to the checkpoint)");

    auto* infer = app.add_subcommand("infer", "Restore one PPM image");
    infer->add_option("checkpoint", checkpoint)->required();
    infer->add_option("input", image_in)->required();
    infer->add_option("output", image_out)->required();

    auto* analyze = app.add_subcommand("analyze", "Report routing specialization on a split");
    analyze->add_option("checkpoint", checkpoint)->required();
    analyze->add_option("split", split)->required();
    analyze->add_option("--out", out_dir, "Report directory (default: next to the checkpoint)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen) return m2r::cmd_gen(load_config(config_path), out_dir, force, std::cout, std::cerr);
        if (*train) {
            m2r::RunConfig config;
            if (!resume.empty()) {
                if (!config_path.empty()) {
                    std::cerr << "error: --resume uses the checkpoint's configuration; drop --config\n";
                    return 2;
                }
                config = m2r::RunConfig::parse(m2r::load_checkpoint(resume).get_bytes("meta.config"));
            } else {
                config = load_config(config_path);
            }
            overrides.apply(config);
            return m2r::cmd_train(config, {out_dir, force, resume}, std::cout, std::cerr);
        }
        if (*eval) return m2r::cmd_eval(checkpoint, split, out_dir, std::cout, std::cerr);
        if (*infer) return m2r::cmd_infer(checkpoint, image_in, image_out, std::cout, std::cerr);
        if (*analyze) return m2r::cmd_analyze(checkpoint, split, out_dir, std::cout, std::cerr);
    } catch (const m2r::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
