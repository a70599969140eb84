#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "m2r/commands.hpp"
#include "m2r/errors.hpp"
#include "m2r/image.hpp"
#include "m2r/metrics.hpp"

using namespace m2r;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("m2r_test_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spill(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string tiny_config_text(const fs::path& corpus) {
    return "seed = 3\n"
           "corpus = " + corpus.string() + "\n"
           "data.train_per_type = 4\n"
           "data.val_per_type = 3\n"
           "data.height = 16\n"
           "data.width = 16\n"
           "model.channels = 4, 8, 16\n"
           "model.blocks = 1, 1, 1\n"
           "model.experts = 3\n"
           "model.prompts = 3\n"
           "model.prompt_width = 4\n"
           "model.prompt_hidden = 4\n"
           "model.prior_width = 4\n"
           "model.ssm_state = 2\n"
           "model.ssm_expand = 1\n"
           "model.expert_expansion = 1\n"
           "train.micro_batch = 2\n"
           "train.accumulation = 1\n"
           "train.steps = 4\n"
           "train.checkpoint_every = 2\n"
           "prior.kind = oracle\n";
}

// A run directory with a generated corpus, shared by the tests below.
struct Workspace {
    fs::path root, corpus;
    RunConfig config;

    explicit Workspace(const std::string& name) : root(scratch(name)), corpus(root / "corpus") {
        config = RunConfig::parse(tiny_config_text(corpus));
        std::ostringstream out, err;
        if (cmd_gen(config, corpus.string(), false, out, err) != 0) throw std::runtime_error(err.str());
    }

    int train(const RunConfig& c, const fs::path& out_dir, const std::string& resume = "") {
        std::ostringstream out, err;
        const int code = cmd_train(c, TrainOptions{out_dir.string(), false, resume}, out, err);
        if (code != 0) ADD_FAILURE() << err.str();
        return code;
    }
};

int run_cli(const std::string& args) {
    const int status = std::system((std::string(M2R_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(RunConfigText, ParsesOverridesAndEchoes) {
    RunConfig c = RunConfig::parse("# comment\nseed = 11\nmodel.variant = no_dgf\ndata.types = rain, haze\n");
    EXPECT_EQ(c.seed, 11u);
    EXPECT_EQ(c.model.variant, Variant::no_dgf);
    EXPECT_EQ(c.data.types.size(), 2u);
    c.override_value("train.steps", "17");
    EXPECT_EQ(c.train.steps, 17u);
    const RunConfig again = RunConfig::parse(c.text);
    EXPECT_EQ(again.resolved(), c.resolved());
    EXPECT_EQ(RunConfig::parse(c.resolved()).resolved(), c.resolved());
    const std::string resolved = c.resolved();
    EXPECT_EQ(RunConfig::keys().size(), static_cast<std::size_t>(std::count(resolved.begin(), resolved.end(), '\n')));
}

TEST(RunConfigText, RejectsUnknownKeysAndBadValuesByName) {
    const auto message = [](const std::string& text) {
        try {
            RunConfig::parse(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(message("model.widht = 3\n").find("model.widht"), std::string::npos);
    EXPECT_NE(message("data.types = rain, smog\n").find("data.types"), std::string::npos);
    EXPECT_NE(message("data.types = unknown\n").find("data.types"), std::string::npos);
    EXPECT_NE(message("train.lr = fast\n").find("train.lr"), std::string::npos);
    EXPECT_NE(message("model.variant = tiny\n").find("model.variant"), std::string::npos);
    EXPECT_NE(message("just text\n"), "no error");
}

TEST(Gen, WritesCountsDeterministicallyAndRefusesNonEmptyDirs) {
    Workspace ws("gen");
    EXPECT_EQ(read_manifest((ws.corpus / "train").string()).size(), 12u);
    EXPECT_EQ(read_manifest((ws.corpus / "val").string()).size(), 9u);
    EXPECT_EQ(slurp(ws.corpus / "config.txt"), ws.config.text);
    const std::string manifest = slurp(ws.corpus / "train" / "manifest.txt");
    const std::string first_image = slurp(ws.corpus / "val" / (read_manifest((ws.corpus / "val").string())[0].id + "_degraded.ppm"));
    std::ostringstream out, err;
    EXPECT_EQ(cmd_gen(ws.config, ws.corpus.string(), false, out, err), 2);
    EXPECT_EQ(cmd_gen(ws.config, ws.corpus.string(), true, out, err), 0);
    EXPECT_EQ(slurp(ws.corpus / "train" / "manifest.txt"), manifest);
    EXPECT_EQ(slurp(ws.corpus / "val" / (read_manifest((ws.corpus / "val").string())[0].id + "_degraded.ppm")),
              first_image);
    EXPECT_NE(out.str().find("rain: 7 samples"), std::string::npos) << out.str();
}

TEST(Train, WritesCheckpointsMetricsAndResumesExactly) {
    Workspace ws("train");
    ASSERT_EQ(ws.train(ws.config, ws.root / "full"), 0);
    EXPECT_TRUE(fs::exists(ws.root / "full" / checkpoint_name(2)));
    EXPECT_TRUE(fs::exists(ws.root / "full" / checkpoint_name(4)));
    EXPECT_EQ(slurp(ws.root / "full" / "config.txt"), ws.config.text);
    const std::string metrics = slurp(ws.root / "full" / "metrics.csv");
    EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 5);

    RunConfig half = ws.config;
    half.override_value("train.steps", "2");
    ASSERT_EQ(ws.train(half, ws.root / "resumed"), 0);
    ASSERT_EQ(ws.train(ws.config, ws.root / "resumed", (ws.root / "resumed" / checkpoint_name(2)).string()), 0);
    EXPECT_EQ(slurp(ws.root / "resumed" / "metrics.csv"), metrics);
    EXPECT_EQ(slurp(ws.root / "resumed" / checkpoint_name(4)), slurp(ws.root / "full" / checkpoint_name(4)));

    std::ostringstream out, err;
    EXPECT_EQ(cmd_train(ws.config, TrainOptions{(ws.root / "full").string(), false, ""}, out, err), 2);
}

TEST(Train, EveryVariantTrainsAndNaNExitsWithThree) {
    Workspace ws("variants");
    for (const char* variant : {"no_dgf", "no_dder", "dder_only"}) {
        RunConfig c = ws.config;
        c.override_value("model.variant", variant);
        c.override_value("train.steps", "1");
        EXPECT_EQ(ws.train(c, ws.root / variant), 0) << variant;
    }
    RunConfig exploding = ws.config;
    exploding.override_value("train.lr", "1e300");
    exploding.override_value("train.steps", "3");
    std::ostringstream out, err;
    EXPECT_EQ(cmd_train(exploding, TrainOptions{(ws.root / "nan").string(), false, ""}, out, err), 3);
    EXPECT_NE(err.str().find("batch"), std::string::npos) << err.str();
}

TEST(Train, LearnedPriorIsFittedAndRestored) {
    Workspace ws("learned");
    RunConfig c = ws.config;
    c.override_value("prior.kind", "learned");
    c.override_value("prior.steps", "5");
    ASSERT_EQ(ws.train(c, ws.root / "run"), 0);
    const LoadedRun run = load_run((ws.root / "run" / checkpoint_name(4)).string());
    EXPECT_EQ(run.step, 4u);
    EXPECT_NE(dynamic_cast<LearnedPrior<float>*>(run.prior.get()), nullptr);
    std::ostringstream out, err;
    EXPECT_EQ(cmd_eval((ws.root / "run" / checkpoint_name(4)).string(), (ws.corpus / "val").string(), "", out, err), 0)
        << err.str();
}

struct IdentityRun : ::testing::Test {
    static void SetUpTestSuite() {
        ws = new Workspace("identity");
        RunConfig c = ws->config;
        c.override_value("train.lr", "0");
        c.override_value("train.steps", "1");
        ws->train(c, ws->root / "run");
        checkpoint = (ws->root / "run" / checkpoint_name(1)).string();
    }
    static void TearDownTestSuite() { delete ws; }
    static Workspace* ws;
    static std::string checkpoint;
};
Workspace* IdentityRun::ws = nullptr;
std::string IdentityRun::checkpoint;

TEST_F(IdentityRun, EvalReportsTheInputBaselineDeterministically) {
    std::ostringstream out, err;
    ASSERT_EQ(cmd_eval(checkpoint, (ws->corpus / "val").string(), "", out, err), 0) << err.str();
    const fs::path csv = ws->root / "run" / "eval_val.csv";
    const std::string first = slurp(csv);
    ASSERT_EQ(cmd_eval(checkpoint, (ws->corpus / "val").string(), "", out, err), 0);
    EXPECT_EQ(slurp(csv), first);
    EXPECT_EQ(first.substr(0, first.find('\n')), "type,count,input_psnr,input_ssim,psnr,ssim");
    EXPECT_EQ(std::count(first.begin(), first.end(), '\n'), 5);
    EXPECT_NE(first.find("\naverage,"), std::string::npos);

    const LoadedRun run = load_run(checkpoint);
    const auto samples = load_split((ws->corpus / "val").string());
    const EvalReport report = evaluate(*run.model, *run.prior, samples);
    for (const auto& row : report.rows) {
        EXPECT_DOUBLE_EQ(row.psnr, row.input_psnr) << row.type;
        EXPECT_DOUBLE_EQ(row.ssim, row.input_ssim) << row.type;
    }
}

TEST_F(IdentityRun, InferKeepsSizeAndIsRepeatable) {
    Image input = read_ppm((ws->corpus / "val" / (read_manifest((ws->corpus / "val").string())[0].id + "_degraded.ppm")).string());
    input = crop(input, 13, 11);
    const fs::path in = ws->root / "odd.ppm", a = ws->root / "a.ppm", b = ws->root / "b.ppm";
    write_ppm(in.string(), input);
    std::ostringstream out, err;
    ASSERT_EQ(cmd_infer(checkpoint, in.string(), a.string(), out, err), 0) << err.str();
    ASSERT_EQ(cmd_infer(checkpoint, in.string(), b.string(), out, err), 0);
    EXPECT_NE(out.str().find("restored 11x13 in"), std::string::npos) << out.str();
    EXPECT_EQ(slurp(a), slurp(b));
    const Image restored = read_ppm(a.string());
    ASSERT_EQ(restored.height, 13u);
    ASSERT_EQ(restored.width, 11u);
    for (std::size_t i = 0; i < input.pixels.size(); ++i)
        ASSERT_LE(std::abs(restored.pixels[i] - input.pixels[i]), 1.0f / 255.0f + 1e-6f) << i;
    EXPECT_EQ(cmd_infer(checkpoint, (ws->root / "missing.ppm").string(), a.string(), out, err), 2);
}

TEST_F(IdentityRun, AnalyzeWritesOneRowPerImageAndBalancedUsage) {
    std::ostringstream out, err;
    ASSERT_EQ(cmd_analyze(checkpoint, (ws->corpus / "val").string(), "", out, err), 0) << err.str();
    const std::string csv = slurp(ws->root / "run" / "routing_val.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
    EXPECT_TRUE(fs::exists(ws->root / "run" / "routing_val_summary.txt"));

    const LoadedRun run = load_run(checkpoint);
    const auto samples = load_split((ws->corpus / "val").string());
    const RoutingReport report = analyze_routing(*run.model, *run.prior, samples);
    EXPECT_GE(report.silhouette, -1.0);
    EXPECT_LE(report.silhouette, 1.0);
    const auto [lo, hi] = std::minmax_element(report.usage.begin(), report.usage.end());
    ASSERT_GT(*lo, 0.0);
    EXPECT_LT(*hi / *lo, 2.0);
    const std::vector<Sample> one_type(samples.begin(), samples.begin() + 3);
    EXPECT_THROW(analyze_routing(*run.model, *run.prior, one_type), ContractError);
}

TEST_F(IdentityRun, BinaryExitCodes) {
    const std::string ckpt = checkpoint, val = (ws->corpus / "val").string();
    EXPECT_EQ(run_cli("eval " + ckpt + " " + val), 0);
    EXPECT_EQ(run_cli("eval " + ckpt + " " + (ws->root / "nowhere").string()), 2);
    EXPECT_EQ(run_cli("eval " + (ws->root / "nothing.m2r").string() + " " + val), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);
    EXPECT_EQ(run_cli("train --out " + (ws->root / "x").string() + " --variant bogus"), 2);
    const fs::path bad = ws->root / "bad.cfg";
    spill(bad, "data.types = rain, fog\n");
    EXPECT_EQ(run_cli("gen --config " + bad.string() + " --out " + (ws->root / "g").string()), 2);
    spill(bad, tiny_config_text(ws->corpus));
    EXPECT_EQ(run_cli("train --config " + bad.string() + " --out " + (ws->root / "r").string() + " --resume " + ckpt),
              2);
    EXPECT_EQ(run_cli("train --config " + bad.string() + " --out " + (ws->root / "s").string() + " --steps 1 --seed 5"),
              0);
    EXPECT_NE(slurp(ws->root / "s" / "config.txt").find("seed = 5"), std::string::npos);
}

}  // namespace
