#include "m2r/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "m2r/errors.hpp"
#include "m2r/losses.hpp"
#include "m2r/metrics.hpp"

namespace m2r {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kEvalChunk = 8;

// Seeds of the independent random streams of a run.
enum Stream : std::uint64_t { model_init = 1, prior_init = 2, prior_fit = 3, batches = 4, oracle = 5 };

std::uint64_t stream_seed(const RunConfig& config, Stream s) { return derive_seed(config.seed, {s}); }

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

bool non_empty_dir(const fs::path& dir) { return fs::exists(dir) && !fs::is_empty(dir); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::string fixed(double v, int digits) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// Runs the model over samples in chunks of equal-sized images, noise off.
template <typename Fn>
void for_each_restored(const Model<float>& model, const PriorProvider<float>& prior, std::span<const Sample> samples,
                       Fn&& fn) {
    NoGradScope no_grad;
    Rng unused(0);
    std::size_t start = 0;
    while (start < samples.size()) {
        std::size_t end = start + 1;
        while (end < samples.size() && end - start < kEvalChunk &&
               samples[end].degraded.height == samples[start].degraded.height &&
               samples[end].degraded.width == samples[start].degraded.width)
            ++end;
        const auto chunk = samples.subspan(start, end - start);
        std::vector<std::size_t> labels;
        for (const auto& s : chunk) labels.push_back(s.label);
        const Tensor<float> images = sample_images<float>(chunk, true);
        const PriorBatch<float> priors = stack_priors<float>(prior.infer(images, labels));
        fn(chunk, model.forward(images, priors, Mode::infer, unused));
        start = end;
    }
}

std::vector<Sample> load_labeled_split(const std::string& split_dir, const ModelConfig& model) {
    if (!fs::is_directory(split_dir)) throw ConfigError("split directory '" + split_dir + "' does not exist");
    auto samples = load_split(split_dir);
    if (samples.empty()) throw ConfigError("split '" + split_dir + "' holds no samples");
    for (const auto& s : samples) {
        if (s.label >= model.classes) throw FormatError("sample " + s.id + " has a label outside the model's classes");
        if (s.degraded.height % model.spatial_multiple() != 0 || s.degraded.width % model.spatial_multiple() != 0)
            throw ContractError("sample " + s.id + " is not a multiple of " +
                                std::to_string(model.spatial_multiple()) + " pixels");
    }
    return samples;
}

std::string split_name(const std::string& split_dir) {
    fs::path p(split_dir);
    if (p.filename().empty()) p = p.parent_path();
    return p.filename().string();
}

fs::path report_dir(const std::string& out_dir, const std::string& checkpoint) {
    fs::path dir = out_dir.empty() ? fs::path(checkpoint).parent_path() : fs::path(out_dir);
    if (dir.empty()) dir = ".";
    fs::create_directories(dir);
    return dir;
}

Checkpoint make_checkpoint(const RunConfig& config, const Model<float>& model, const PriorProvider<float>& prior,
                           const AdamState<float>& opt, const Rng& rng, std::uint64_t step) {
    Checkpoint ckpt;
    ckpt.put_bytes("meta.config", config.resolved());
    ckpt.put_u64("meta.step", step);
    ckpt.put_bytes("meta.rng", rng_state(rng));
    const ParamList<float> params = model.parameters();
    store_params(ckpt, "model", params);
    if (const auto* learned = dynamic_cast<const LearnedPrior<float>*>(&prior)) {
        ParamList<float> prior_params;
        learned->collect("", prior_params);
        store_params(ckpt, "prior", prior_params);
    }
    store_adam(ckpt, params, opt);
    return ckpt;
}

}  // namespace

std::string checkpoint_name(std::uint64_t step) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "checkpoint_%06llu.m2r", static_cast<unsigned long long>(step));
    return buf;
}

std::unique_ptr<PriorProvider<float>> make_prior(const RunConfig& config) {
    if (config.prior == PriorKind::oracle)
        return std::make_unique<OraclePrior<float>>(config.model.classes, config.model.prior_width,
                                                    stream_seed(config, oracle), config.prior_smoothing);
    Rng rng(stream_seed(config, prior_init));
    return std::make_unique<LearnedPrior<float>>(config.model.classes, config.model.prior_width, rng);
}

LoadedRun load_run(const std::string& checkpoint_path) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    LoadedRun run;
    run.config = RunConfig::parse(ckpt.get_bytes("meta.config"));
    run.step = ckpt.get_u64("meta.step");
    run.model = std::make_unique<Model<float>>(build_variant<float>(run.config.model, stream_seed(run.config, model_init)));
    load_params(ckpt, "model", run.model->parameters());
    run.prior = make_prior(run.config);
    if (auto* learned = dynamic_cast<LearnedPrior<float>*>(run.prior.get())) {
        ParamList<float> prior_params;
        learned->collect("", prior_params);
        load_params(ckpt, "prior", prior_params);
        learned->mark_trained();
    }
    return run;
}

std::string EvalReport::csv() const {
    std::string out = "type,count,input_psnr,input_ssim,psnr,ssim\n";
    auto row = [&](const TypeScore& r) {
        out += r.type + "," + std::to_string(r.count) + "," + fixed(r.input_psnr, 6) + "," + fixed(r.input_ssim, 6) +
               "," + fixed(r.psnr, 6) + "," + fixed(r.ssim, 6) + "\n";
    };
    for (const auto& r : rows) row(r);
    row(average);
    return out;
}

std::string EvalReport::table() const {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-10s %6s %12s %12s %10s %10s\n", "type", "count", "input PSNR", "input SSIM",
                  "PSNR", "SSIM");
    out << line;
    auto row = [&](const TypeScore& r) {
        std::snprintf(line, sizeof line, "%-10s %6zu %12s %12s %10s %10s\n", r.type.c_str(), r.count,
                      fixed(r.input_psnr, 2).c_str(), fixed(r.input_ssim, 4).c_str(), fixed(r.psnr, 2).c_str(),
                      fixed(r.ssim, 4).c_str());
        out << line;
    };
    for (const auto& r : rows) row(r);
    row(average);
    return out.str();
}

EvalReport evaluate(const Model<float>& model, const PriorProvider<float>& prior, std::span<const Sample> samples) {
    std::map<std::size_t, TypeScore> by_label;
    for_each_restored(model, prior, samples, [&](std::span<const Sample> chunk, const ForwardResult<float>& result) {
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            Image restored = image_from_tensor(result.restored, i);
            clamp_unit(restored);
            TypeScore& score = by_label[chunk[i].label];
            score.type = to_string(static_cast<Degradation>(chunk[i].label));
            ++score.count;
            score.input_psnr += psnr(chunk[i].degraded, chunk[i].clean);
            score.input_ssim += ssim(chunk[i].degraded, chunk[i].clean);
            score.psnr += psnr(restored, chunk[i].clean);
            score.ssim += ssim(restored, chunk[i].clean);
        }
    });
    EvalReport report;
    report.average.type = "average";
    for (auto& [label, score] : by_label) {
        const double n = static_cast<double>(score.count);
        score.input_psnr /= n;
        score.input_ssim /= n;
        score.psnr /= n;
        score.ssim /= n;
        report.rows.push_back(score);
        report.average.count += score.count;
        report.average.input_psnr += score.input_psnr;
        report.average.input_ssim += score.input_ssim;
        report.average.psnr += score.psnr;
        report.average.ssim += score.ssim;
    }
    if (!report.rows.empty()) {
        const double types = static_cast<double>(report.rows.size());
        report.average.input_psnr /= types;
        report.average.input_ssim /= types;
        report.average.psnr /= types;
        report.average.ssim /= types;
    }
    return report;
}

double RoutingReport::max_cross_cosine() const {
    double best = -1.0;
    for (std::size_t i = 0; i < cosine.size(); ++i)
        for (std::size_t j = i + 1; j < cosine.size(); ++j) best = std::max(best, cosine[i][j]);
    return best;
}

std::string RoutingReport::csv() const {
    const std::size_t n = vectors.empty() ? 0 : vectors.front().size();
    std::string out = "id,type";
    for (std::size_t e = 0; e < n; ++e) out += ",w_" + std::to_string(e);
    out += "\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out += ids[i] + "," + to_string(static_cast<Degradation>(labels[i]));
        for (double w : vectors[i]) out += "," + fixed(w, 9);
        out += "\n";
    }
    return out;
}

std::string RoutingReport::summary() const {
    std::ostringstream out;
    out << "images: " << ids.size() << "\n";
    out << "routing centroids (mean expert weight per type):\n";
    for (std::size_t t = 0; t < types.size(); ++t) {
        out << "  " << to_string(static_cast<Degradation>(types[t])) << ":";
        for (double w : centroids[t]) out << " " << fixed(w, 4);
        out << "\n";
    }
    out << "pairwise cosine similarity:\n";
    for (std::size_t i = 0; i < types.size(); ++i)
        for (std::size_t j = i + 1; j < types.size(); ++j)
            out << "  " << to_string(static_cast<Degradation>(types[i])) << " / "
                << to_string(static_cast<Degradation>(types[j])) << ": " << fixed(cosine[i][j], 4) << "\n";
    out << "silhouette: " << fixed(silhouette, 4) << "\n";
    out << "expert usage:";
    for (double u : usage) out << " " << static_cast<std::uint64_t>(u);
    out << "\n";
    return out.str();
}

RoutingReport analyze_routing(const Model<float>& model, const PriorProvider<float>& prior,
                              std::span<const Sample> samples) {
    if (model.config().variant == Variant::no_dder) throw ContractError("routing analysis needs a model with routers");
    RoutingReport report;
    const std::size_t experts = model.config().experts;
    report.usage.assign(experts, 0.0);
    for_each_restored(model, prior, samples, [&](std::span<const Sample> chunk, const ForwardResult<float>& result) {
        const auto& diag = result.diagnostics;
        const auto usage = usage_histogram<float>(std::span<const RoutingState<float>>(diag));
        for (std::size_t e = 0; e < experts; ++e) report.usage[e] += usage[e];
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            std::vector<double> v(experts, 0.0);
            for (const auto& state : diag) {
                const std::size_t area = state.positions();
                const auto se = state.Se.data();
                for (std::size_t e = 0; e < experts; ++e) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < area; ++p) acc += se[(i * experts + e) * area + p];
                    v[e] += acc / static_cast<double>(area) / static_cast<double>(diag.size());
                }
            }
            report.ids.push_back(chunk[i].id);
            report.labels.push_back(chunk[i].label);
            report.vectors.push_back(std::move(v));
        }
    });

    std::map<std::size_t, std::vector<double>> sums;
    std::map<std::size_t, std::size_t> members;
    for (std::size_t i = 0; i < report.vectors.size(); ++i) {
        auto& sum = sums[report.labels[i]];
        sum.resize(experts, 0.0);
        for (std::size_t e = 0; e < experts; ++e) sum[e] += report.vectors[i][e];
        ++members[report.labels[i]];
    }
    if (sums.size() < 2) throw ContractError("routing analysis needs at least two degradation types in the split");
    for (auto& [label, sum] : sums) {
        for (double& v : sum) v /= static_cast<double>(members[label]);
        report.types.push_back(label);
        report.centroids.push_back(sum);
    }
    const std::size_t t = report.types.size();
    report.cosine.assign(t, std::vector<double>(t, 1.0));
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j)
            report.cosine[i][j] = cosine_similarity(report.centroids[i], report.centroids[j]);
    report.silhouette = silhouette(report.vectors, report.labels);
    return report;
}

int cmd_gen(const RunConfig& config, const std::string& out_dir, bool force, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const fs::path dir(out_dir);
        if (non_empty_dir(dir) && !force) {
            err << "error: output directory '" << out_dir << "' is not empty (use --force to overwrite)\n";
            return 2;
        }
        if (force) {
            fs::remove_all(dir / "train");
            fs::remove_all(dir / "val");
        }
        fs::create_directories(dir);
        write_text(dir / "config.txt", config.text);
        const auto counts = write_corpus(config.data, out_dir);
        std::size_t total = 0;
        for (const auto& [type, count] : counts) {
            out << type << ": " << count << " samples\n";
            total += count;
        }
        out << "total: " << total << " samples in " << out_dir << "\n";
        return 0;
    });
}

int cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        std::uint64_t step = 0;
        const fs::path dir(options.out_dir);
        if (non_empty_dir(dir) && !options.force && options.resume.empty()) {
            err << "error: output directory '" << options.out_dir
                << "' is not empty (use --force to overwrite or --resume to continue)\n";
            return 2;
        }
        fs::create_directories(dir);
        write_text(dir / "config.txt", config.text);
        write_text(dir / "config.resolved.txt", config.resolved());

        const std::vector<Sample> train = load_labeled_split((fs::path(config.corpus) / "train").string(), config.model);
        const Model<float> model = build_variant<float>(config.model, stream_seed(config, model_init));
        const ParamList<float> params = model.parameters();
        std::unique_ptr<PriorProvider<float>> prior = make_prior(config);
        AdamState<float> opt(params);
        Rng rng(stream_seed(config, batches));

        if (!options.resume.empty()) {
            const Checkpoint ckpt = load_checkpoint(options.resume);
            load_params(ckpt, "model", params);
            opt = load_adam(ckpt, params);
            step = ckpt.get_u64("meta.step");
            set_rng_state(rng, ckpt.get_bytes("meta.rng"));
            if (auto* learned = dynamic_cast<LearnedPrior<float>*>(prior.get())) {
                ParamList<float> prior_params;
                learned->collect("", prior_params);
                load_params(ckpt, "prior", prior_params);
                learned->mark_trained();
            }
            out << "resumed from " << options.resume << " at step " << step << "\n";
        } else if (auto* learned = dynamic_cast<LearnedPrior<float>*>(prior.get())) {
            Rng prior_rng(stream_seed(config, prior_fit));
            const double accuracy = train_prior(*learned, std::span<const Sample>(train), config.prior_train, prior_rng);
            out << "degradation prior: train accuracy " << fixed(100.0 * accuracy, 1) << "%\n";
        }
        out << "parameters: " << count_parameters(params) << " (" << to_string(config.model.variant) << ")\n";

        // Keep rows up to the resume point, then append.
        const fs::path metrics_path = dir / "metrics.csv";
        std::string kept = StepMetrics::csv_header(config.model.experts) + "\n";
        if (step > 0 && fs::exists(metrics_path)) {
            std::ifstream in(metrics_path);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                const auto comma = line.find(',');
                if (comma == std::string::npos || std::stoull(line.substr(0, comma)) > step) break;
                kept += line + "\n";
            }
        }
        write_text(metrics_path, kept);
        std::ofstream metrics(metrics_path, std::ios::binary | std::ios::app);

        const auto started = std::chrono::steady_clock::now();
        const std::uint64_t total_steps = config.train.steps;
        if (step >= total_steps) out << "nothing to train: already at step " << step << "\n";
        while (step < total_steps) {
            const std::vector<Sample> batch = draw_batch(train, config.train, rng);
            const StepMetrics m = train_step<float>(model, *prior, batch, opt, config.train, rng, step + 1);
            step = m.step;
            metrics << m.csv_row() << "\n" << std::flush;
            if (step % 50 == 0 || step == total_steps) {
                const double elapsed =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
                out << "step " << step << "/" << total_steps << "  l1 " << fixed(m.l1, 5) << "  balance "
                    << fixed(m.balance, 4) << "  " << fixed(elapsed, 1) << " s\n"
                    << std::flush;
            }
            if (step % config.train.checkpoint_every == 0 || step == total_steps) {
                const fs::path path = dir / checkpoint_name(step);
                save_checkpoint(make_checkpoint(config, model, *prior, opt, rng, step), path.string());
            }
        }
        return 0;
    });
}

int cmd_eval(const std::string& checkpoint, const std::string& split_dir, const std::string& out_dir,
             std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const LoadedRun run = load_run(checkpoint);
        const auto samples = load_labeled_split(split_dir, run.config.model);
        const EvalReport report = evaluate(*run.model, *run.prior, samples);
        const fs::path path = report_dir(out_dir, checkpoint) / ("eval_" + split_name(split_dir) + ".csv");
        write_text(path, report.csv());
        out << report.table();
        return 0;
    });
}

int cmd_infer(const std::string& checkpoint, const std::string& image_in, const std::string& image_out,
              std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const LoadedRun run = load_run(checkpoint);
        const Image input = read_ppm(image_in);
        const auto started = std::chrono::steady_clock::now();
        const std::size_t multiple = run.config.model.spatial_multiple();
        const std::size_t h = (input.height + multiple - 1) / multiple * multiple;
        const std::size_t w = (input.width + multiple - 1) / multiple * multiple;
        Sample sample;
        sample.degraded = reflect_pad(input, h, w);
        sample.label = static_cast<std::size_t>(Degradation::unknown);
        Image restored;
        for_each_restored(*run.model, *run.prior, std::span<const Sample>(&sample, 1),
                          [&](std::span<const Sample>, const ForwardResult<float>& result) {
                              restored = crop(image_from_tensor(result.restored, 0), input.height, input.width);
                          });
        clamp_unit(restored);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        write_ppm(image_out, restored);
        out << "restored " << input.width << "x" << input.height << " in " << fixed(seconds * 1000.0, 1) << " ms\n";
        return 0;
    });
}

int cmd_analyze(const std::string& checkpoint, const std::string& split_dir, const std::string& out_dir,
                std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const LoadedRun run = load_run(checkpoint);
        const auto samples = load_labeled_split(split_dir, run.config.model);
        const RoutingReport report = analyze_routing(*run.model, *run.prior, samples);
        const fs::path dir = report_dir(out_dir, checkpoint);
        const std::string name = split_name(split_dir);
        write_text(dir / ("routing_" + name + ".csv"), report.csv());
        write_text(dir / ("routing_" + name + "_summary.txt"), report.summary());
        out << report.summary();
        return 0;
    });
}

}  // namespace m2r
