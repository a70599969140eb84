#pragma once

// The five command-line verbs as library calls, plus the evaluation and
// routing-analysis reports they print. Every cmd_* returns the process exit
// code: 0 success, 2 usage or validation failure, 3 numeric failure.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "m2r/run_config.hpp"

namespace m2r {

// Model and prior restored from a training checkpoint.
struct LoadedRun {
    RunConfig config;
    std::unique_ptr<Model<float>> model;
    std::unique_ptr<PriorProvider<float>> prior;
    std::uint64_t step = 0;
};

LoadedRun load_run(const std::string& checkpoint_path);

// Degradation prior used by a run's configuration, freshly initialized.
std::unique_ptr<PriorProvider<float>> make_prior(const RunConfig& config);

struct TypeScore {
    std::string type;
    std::size_t count = 0;
    double input_psnr = 0.0, input_ssim = 0.0;  // degraded vs clean
    double psnr = 0.0, ssim = 0.0;              // restored vs clean
};

struct EvalReport {
    std::vector<TypeScore> rows;  // one per degradation type, in label order
    TypeScore average;            // unweighted mean over the type rows

    std::string csv() const;
    std::string table() const;
};

// Restores every sample (noise off) and scores it; PSNR/SSIM are averaged
// per image within each type.
EvalReport evaluate(const Model<float>& model, const PriorProvider<float>& prior, std::span<const Sample> samples);

struct RoutingReport {
    std::vector<std::string> ids;
    std::vector<std::size_t> labels;
    // Per image: Se averaged over pixels and over routers, length N.
    std::vector<std::vector<double>> vectors;
    std::vector<std::size_t> types;               // labels present, ascending
    std::vector<std::vector<double>> centroids;   // aligned with types
    std::vector<std::vector<double>> cosine;      // types x types
    double silhouette = 0.0;
    std::vector<double> usage;  // expert activation counts over the split

    double max_cross_cosine() const;
    std::string csv() const;
    std::string summary() const;
};

// ContractError when the model has no routers or fewer than two types
// (with two or more images each) are present.
RoutingReport analyze_routing(const Model<float>& model, const PriorProvider<float>& prior,
                              std::span<const Sample> samples);

int cmd_gen(const RunConfig& config, const std::string& out_dir, bool force, std::ostream& out, std::ostream& err);

struct TrainOptions {
    std::string out_dir;
    bool force = false;
    std::string resume;  // checkpoint to continue from; empty for a fresh run
};

// Writes config.txt (verbatim), config.resolved.txt, metrics.csv and
// checkpoint_<step>.m2r every train.checkpoint_every steps and at the end.
int cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& out, std::ostream& err);

// CSV goes to <out_dir>/eval_<split>.csv, defaulting to the checkpoint's
// directory.
int cmd_eval(const std::string& checkpoint, const std::string& split_dir, const std::string& out_dir,
             std::ostream& out, std::ostream& err);

int cmd_infer(const std::string& checkpoint, const std::string& image_in, const std::string& image_out,
              std::ostream& out, std::ostream& err);

// Writes <out_dir>/routing_<split>.csv and routing_<split>_summary.txt.
int cmd_analyze(const std::string& checkpoint, const std::string& split_dir, const std::string& out_dir,
                std::ostream& out, std::ostream& err);

std::string checkpoint_name(std::uint64_t step);

}  // namespace m2r
