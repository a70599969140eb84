// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is the number of failed criteria.
//
//   acceptance [--only 1,2,...] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <set>
#include <string>
#include <vector>

#include "gradient_cases.hpp"
#include "m2r/commands.hpp"
#include "m2r/image.hpp"
#include "m2r/losses.hpp"
#include "m2r/metrics.hpp"
#include "oracles.hpp"

using namespace m2r;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string format(const char* fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Shared state: the generated default corpus and the criterion-6 run.
struct Workspace {
    fs::path root;
    fs::path corpus() const { return root / "corpus"; }
    fs::path desk_run() const { return root / "desk_run"; }

    RunConfig base_config() const {
        RunConfig c;
        c.override_value("corpus", corpus().string());
        return c;
    }

    void ensure_corpus() {
        if (fs::exists(corpus() / "val" / "manifest.txt")) return;
        std::ostringstream out;
        if (cmd_gen(base_config(), corpus().string(), true, out, std::cerr) != 0)
            throw std::runtime_error("corpus generation failed");
        std::cout << out.str() << std::flush;
    }

    std::string desk_checkpoint() const {
        return (desk_run() / checkpoint_name(base_config().train.steps)).string();
    }
};

Outcome gradient_suite() {
    const auto start = Clock::now();
    std::string worst_name;
    double worst_ratio = 0.0, worst_error = 0.0, end_to_end = 0.0;
    std::size_t failures = 0, cases = 0;
    for (const auto& c : m2r::testing::gradient_cases()) {
        const auto result = c.run();
        ++cases;
        if (!(result.rel_error <= c.tolerance) || result.entries == 0) {
            ++failures;
            std::cout << "  gradient mismatch in " << c.name << ": " << result.rel_error << " (" << result.worst
                      << ")\n";
        }
        if (c.name == "end_to_end") end_to_end = result.rel_error;
        const double ratio = result.rel_error / c.tolerance;
        if (ratio >= worst_ratio) {
            worst_ratio = ratio;
            worst_name = c.name;
            worst_error = result.rel_error;
        }
    }
    const double elapsed = seconds_since(start);
    return {failures == 0 && elapsed < 300.0,
            format("%zu cases, worst %s rel err %.2e, end-to-end %.2e, %.1f s", cases, worst_name.c_str(),
                   worst_error, end_to_end, elapsed)};
}

Outcome scan_oracle() {
    double worst = 0.0;
    std::size_t runs = 0;
    for (std::size_t length : {1, 7, 64, 1024, 4096})
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(1000 * length + seed);
            SsmParams<double> p(4, 8, rng);
            std::normal_distribution<double> normal(0.0, 0.5);
            for (auto* t : {&p.a_log, &p.proj_b, &p.proj_c, &p.proj_delta, &p.delta_bias})
                for (double& v : t->mutable_data()) v += normal(rng);
            const auto u = m2r::testing::random_tensor({2, 4, length}, rng, -1.0, 1.0, false);
            const auto got = ssm_scan(u, p);
            const auto want = m2r::testing::naive_ssm(u, p);
            double scale = 1e-300, gap = 0.0;
            for (std::size_t i = 0; i < want.size(); ++i) {
                scale = std::max(scale, std::abs(want[i]));
                gap = std::max(gap, std::abs(got.data()[i] - want[i]));
            }
            worst = std::max(worst, gap / scale);
            ++runs;
        }
    return {worst <= 1e-6, format("%zu runs, L up to 4096, worst relative gap %.2e", runs, worst)};
}

Outcome router_invariants() {
    Rng rng(77);
    const std::size_t channels = 8, pixels = 1000;
    const RouterConfig config{channels, 6, 5, 4, 2, 2.0};
    Dder<double> router(config, rng);
    const auto x = m2r::testing::random_tensor({1, channels, 10, pixels / 10}, rng, -1, 1, false);
    const auto task = m2r::testing::random_tensor({1, 6}, rng, -1, 1, false);
    const auto probs = m2r::testing::random_tensor({1, 5}, rng, 0, 1, false);
    RoutingState<double> state;
    Rng noise(3);
    router.forward(x, task, probs, Mode::train, noise, state);

    const std::size_t n = config.experts, k = config.top_k;
    std::size_t bad_count = 0, shift_mismatch = 0;
    double worst_sum = 0.0;
    std::uniform_real_distribution<double> shift(-50.0, 50.0);
    Tensor<double> shifted = state.S_tilde.detach();
    std::vector<double> offsets(pixels);
    for (double& o : offsets) o = shift(rng);
    for (std::size_t e = 0; e < n; ++e)
        for (std::size_t p = 0; p < pixels; ++p) shifted.mutable_data()[e * pixels + p] += offsets[p];
    const auto reselected = sparse_select(shifted, k);
    for (std::size_t p = 0; p < pixels; ++p) {
        std::size_t nonzero = 0;
        double total = 0.0;
        for (std::size_t e = 0; e < n; ++e) {
            const double w = state.Se.data()[e * pixels + p];
            nonzero += w != 0.0;
            total += w;
            if ((w != 0.0) != (reselected.data()[e * pixels + p] != 0.0)) ++shift_mismatch;
        }
        if (nonzero != k) ++bad_count;
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    }
    const auto sparse = dispatch(x, state.Se, router.bank);
    const auto dense = m2r::testing::dense_dispatch(x, state.Se, router.bank);
    double gap = 0.0;
    for (std::size_t i = 0; i < dense.numel(); ++i) gap = std::max(gap, std::abs(sparse.data()[i] - dense.data()[i]));
    return {bad_count == 0 && worst_sum <= 1e-6 && shift_mismatch == 0 && gap <= 1e-6,
            format("%zu pixels: %zu rows without exactly K=%zu, row-sum gap %.1e, %zu shift mismatches, "
                   "sparse/dense gap %.1e",
                   pixels, bad_count, k, worst_sum, shift_mismatch, gap)};
}

Outcome balance_closed_forms() {
    const auto balance_of = [](const Tensor<double>& se) {
        RoutingState<double> s;
        s.Se = se;
        const std::vector<RoutingState<double>> diag{s};
        return loss_balance<double>(diag).item();
    };
    // Four experts, every pixel spread 0.5/0.5 over a rotating pair: equal
    // weight totals and equal counts.
    Tensor<double> uniform({1, 4, 1, 8});
    for (std::size_t p = 0; p < 8; ++p) {
        uniform.mutable_data()[(p % 4) * 8 + p] = 0.5;
        uniform.mutable_data()[((p + 1) % 4) * 8 + p] = 0.5;
    }
    // Two experts, every pixel on expert 0: w = [P, 0], s = [P, 0].
    Tensor<double> degenerate({1, 2, 1, 6});
    for (std::size_t p = 0; p < 6; ++p) degenerate.mutable_data()[p] = 1.0;
    const double u = balance_of(uniform), d = balance_of(degenerate);
    return {u <= 1e-6 && std::abs(d - 2.0) <= 1e-3, format("uniform %.2e, two-expert degenerate %.6f", u, d)};
}

Outcome fusion_endpoints() {
    Rng rng(21);
    McdbConfig mc;
    mc.channels = 8;
    mc.state = 4;
    mc.prior_width = 6;
    const Mcdb<double> block(mc, rng);
    const auto x = m2r::testing::random_tensor({2, 8, 6, 6}, rng, -1, 1, false);
    const auto prior = m2r::testing::random_tensor({2, 6}, rng, -1, 1, false);
    const auto one = block.forward_parts(x, prior, 1.0), zero = block.forward_parts(x, prior, 0.0);
    const bool cnn_exact = std::equal(one.out.data().begin(), one.out.data().end(), one.cnn.data().begin());
    const bool mamba_exact = std::equal(zero.out.data().begin(), zero.out.data().end(), zero.mamba.data().begin());
    std::size_t outside = 0, checked = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const auto g = m2r::testing::random_tensor(one.cnn.shape(), rng, 0, 1, false);
        const auto y = fuse(g, one.cnn, zero.mamba);
        for (std::size_t i = 0; i < y.numel(); ++i, ++checked) {
            const double lo = std::min(one.cnn.data()[i], zero.mamba.data()[i]);
            const double hi = std::max(one.cnn.data()[i], zero.mamba.data()[i]);
            if (y.data()[i] < lo || y.data()[i] > hi) ++outside;
        }
    }
    return {cnn_exact && mamba_exact && outside == 0,
            format("G=1 %s, G=0 %s, %zu of %zu random-gate outputs outside the branch interval",
                   cnn_exact ? "bit-exact" : "differs", mamba_exact ? "bit-exact" : "differs", outside, checked)};
}

Outcome desk_training(Workspace& ws) {
    ws.ensure_corpus();
    const RunConfig config = ws.base_config();
    const auto start = Clock::now();
    const int code = cmd_train(config, TrainOptions{ws.desk_run().string(), true, ""}, std::cout, std::cerr);
    const double minutes = seconds_since(start) / 60.0;
    if (code != 0) return {false, format("training exited with %d", code)};
    const LoadedRun run = load_run(ws.desk_checkpoint());
    const auto val = load_split((ws.corpus() / "val").string());
    const EvalReport report = evaluate(*run.model, *run.prior, val);
    std::cout << report.table();
    const double gain = report.average.psnr - report.average.input_psnr;
    return {gain >= 3.0 && minutes <= 60.0,
            format("val PSNR %.2f dB vs degraded input %.2f dB (gain %+.2f dB), %zu steps in %.1f min",
                   report.average.psnr, report.average.input_psnr, gain, config.train.steps, minutes)};
}

Outcome ablation_direction(Workspace& ws) {
    ws.ensure_corpus();
    const auto train = load_split((ws.corpus() / "train").string());
    const auto val = load_split((ws.corpus() / "val").string());
    const std::vector<Variant> variants{Variant::full, Variant::no_dgf, Variant::no_dder};
    std::size_t beats_no_dgf = 0, beats_no_dder = 0;
    std::string table;
    for (std::uint64_t seed : {1, 2, 3}) {
        RunConfig config = ws.base_config();
        config.seed = seed;
        Rng prior_init(derive_seed(seed, {2})), prior_fit(derive_seed(seed, {3}));
        LearnedPrior<float> prior(config.model.classes, config.model.prior_width, prior_init);
        train_prior(prior, std::span<const Sample>(train), config.prior_train, prior_fit);
        std::vector<double> psnr;
        for (Variant v : variants) {
            ModelConfig mc = config.model;
            mc.variant = v;
            const Model<float> model = build_variant<float>(mc, derive_seed(seed, {1}));
            AdamState<float> opt(model.parameters());
            Rng rng(derive_seed(seed, {4}));
            for (std::uint64_t step = 1; step <= config.train.steps; ++step) {
                const auto batch = draw_batch(train, config.train, rng);
                train_step<float>(model, prior, batch, opt, config.train, rng, step);
            }
            psnr.push_back(evaluate(model, prior, val).average.psnr);
        }
        beats_no_dgf += psnr[0] >= psnr[1];
        beats_no_dder += psnr[0] >= psnr[2];
        table += format("seed %llu: full %.2f, no_dgf %.2f, no_dder %.2f; ", static_cast<unsigned long long>(seed),
                        psnr[0], psnr[1], psnr[2]);
        std::cout << "  " << table.substr(table.rfind("seed")) << "\n" << std::flush;
    }
    return {beats_no_dgf >= 2 && beats_no_dder >= 2,
            table + format("full >= no_dgf in %zu/3, >= no_dder in %zu/3 (%zu steps each)", beats_no_dgf,
                           beats_no_dder, ws.base_config().train.steps)};
}

Outcome routing_specialization(Workspace& ws) {
    if (!fs::exists(ws.desk_checkpoint())) return {false, "criterion 6 checkpoint missing"};
    const LoadedRun run = load_run(ws.desk_checkpoint());
    const auto val = load_split((ws.corpus() / "val").string());
    const RoutingReport report = analyze_routing(*run.model, *run.prior, val);
    std::cout << report.summary();
    const double cosine = report.max_cross_cosine();
    return {cosine < 0.95 && report.silhouette > 0.0,
            format("max cross-type centroid cosine %.4f, silhouette %.4f", cosine, report.silhouette)};
}

Outcome determinism(Workspace& ws) {
    ws.ensure_corpus();
    const fs::path dir = ws.root / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ostringstream quiet;

    // Inference with noise off, twice, on the trained model when available.
    RunConfig small = ws.base_config();
    small.override_value("prior.kind", "oracle");
    small.override_value("train.steps", "6");
    small.override_value("train.checkpoint_every", "3");
    std::string ckpt = ws.desk_checkpoint();
    if (!fs::exists(ckpt)) {
        if (cmd_train(small, TrainOptions{(dir / "fallback").string(), true, ""}, quiet, std::cerr) != 0)
            return {false, "training for the inference check failed"};
        ckpt = (dir / "fallback" / checkpoint_name(6)).string();
    }
    const auto entries = read_manifest((ws.corpus() / "val").string());
    const std::string image = (ws.corpus() / "val" / (entries.front().id + "_degraded.ppm")).string();
    bool infer_same = cmd_infer(ckpt, image, (dir / "a.ppm").string(), quiet, std::cerr) == 0 &&
                      cmd_infer(ckpt, image, (dir / "b.ppm").string(), quiet, std::cerr) == 0 &&
                      slurp(dir / "a.ppm") == slurp(dir / "b.ppm");
    {
        const LoadedRun run = load_run(ckpt);
        const auto val = load_split((ws.corpus() / "val").string());
        const std::vector<Sample> chunk(val.begin(), val.begin() + 4);
        std::vector<std::size_t> labels;
        for (const auto& s : chunk) labels.push_back(s.label);
        const auto images = sample_images<float>(chunk, true);
        const auto prior = stack_priors<float>(run.prior->infer(images, labels));
        NoGradScope no_grad;
        Rng a(1), b(2);
        const auto ya = run.model->forward(images, prior, Mode::infer, a);
        const auto yb = run.model->forward(images, prior, Mode::infer, b);
        infer_same = infer_same &&
                     std::equal(ya.restored.data().begin(), ya.restored.data().end(), yb.restored.data().begin());
    }

    // Checkpoint load -> save reproduces the file.
    save_checkpoint(load_checkpoint(ckpt), (dir / "copy.m2r").string());
    const bool ckpt_same = slurp(ckpt) == slurp(dir / "copy.m2r");

    // Resume at step 3 and continue to 6 versus an uninterrupted run.
    bool resume_same = false;
    if (cmd_train(small, TrainOptions{(dir / "straight").string(), true, ""}, quiet, std::cerr) == 0) {
        RunConfig first_half = small;
        first_half.override_value("train.steps", "3");
        if (cmd_train(first_half, TrainOptions{(dir / "resumed").string(), true, ""}, quiet, std::cerr) == 0 &&
            cmd_train(small, TrainOptions{(dir / "resumed").string(), false, (dir / "resumed" / checkpoint_name(3)).string()},
                      quiet, std::cerr) == 0)
            resume_same = slurp(dir / "straight" / "metrics.csv") == slurp(dir / "resumed" / "metrics.csv") &&
                          slurp(dir / "straight" / checkpoint_name(6)) == slurp(dir / "resumed" / checkpoint_name(6));
    }
    return {infer_same && ckpt_same && resume_same,
            format("repeated inference %s, checkpoint round trip %s, resumed run %s",
                   infer_same ? "bit-identical" : "differs", ckpt_same ? "byte-identical" : "differs",
                   resume_same ? "matches" : "differs")};
}

Outcome metric_oracles() {
    // Offsets that are exact in binary floating point.
    std::vector<float> a(300, 0.25f), b(300, 0.375f);
    const double p1 = psnr(a, b), want1 = 10.0 * std::log10(64.0);
    std::vector<float> c(300, 10.0f), d(300, 26.0f);
    const double p2 = psnr(c, d, 255.0), want2 = 10.0 * std::log10(255.0 * 255.0 / 256.0);
    for (std::size_t i = 0; i < 150; ++i) b[i] = 0.25f;
    const double p3 = psnr(a, b), want3 = 10.0 * std::log10(128.0);
    const double psnr_gap = std::max({std::abs(p1 - want1), std::abs(p2 - want2), std::abs(p3 - want3)});

    Rng rng(5);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    Image img(24, 20);
    for (float& v : img.pixels) v = unit(rng);
    const double self = ssim(img, img);

    double silhouette_gap = 0.0;
    std::uniform_real_distribution<double> coord(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> points(10, std::vector<double>(4));
        std::vector<std::size_t> labels(10);
        for (std::size_t i = 0; i < 10; ++i) {
            labels[i] = i % 3;
            for (double& v : points[i]) v = coord(rng) + static_cast<double>(labels[i]);
        }
        silhouette_gap = std::max(silhouette_gap, std::abs(silhouette(points, labels) -
                                                           m2r::testing::brute_silhouette(points, labels)));
    }
    return {psnr_gap <= 1e-6 && self == 1.0 && silhouette_gap <= 1e-9,
            format("psnr gap %.1e dB, ssim(a,a) = %.17g, silhouette gap %.1e over 50 instances", psnr_gap, self,
                   silhouette_gap)};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    fs::path work = fs::current_path() / "acceptance_work";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--only" && i + 1 < argc) {
            std::stringstream list(argv[++i]);
            std::string item;
            while (std::getline(list, item, ',')) only.insert(std::stoi(item));
        } else if (arg == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else {
            std::cerr << "usage: acceptance [--only 1,2,...] [--work DIR]\n";
            return 2;
        }
    }
    fs::create_directories(work);
    Workspace ws{work};

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"scan oracle", scan_oracle},
        {"router invariants", router_invariants},
        {"balance loss closed forms", balance_closed_forms},
        {"fusion endpoints", fusion_endpoints},
        {"desk training regression", [&] { return desk_training(ws); }},
        {"ablation direction", [&] { return ablation_direction(ws); }},
        {"routing specialization", [&] { return routing_specialization(ws); }},
        {"determinism", [&] { return determinism(ws); }},
        {"metric oracles", metric_oracles},
    };

    std::vector<std::string> lines;
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i) + 1;
        if (!only.empty() && !only.contains(number)) continue;
        std::cout << "== criterion " << number << ": " << criteria[i].first << "\n" << std::flush;
        Outcome outcome;
        try {
            outcome = criteria[i].second();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        failures += !outcome.pass;
        lines.push_back(format("criterion %2d %-27s %s  %s", number, criteria[i].first.c_str(),
                               outcome.pass ? "PASS" : "FAIL", outcome.detail.c_str()));
        std::cout << lines.back() << "\n" << std::flush;
    }
    std::cout << "\nsummary\n";
    for (const auto& line : lines) std::cout << line << "\n";
    return failures;
}
