#pragma once

// Line-oriented run configuration: `key = value` per line, `#` starts a
// comment, later lines override earlier ones, unknown keys are rejected.

#include <cstdint>
#include <string>
#include <vector>

#include "m2r/corpus.hpp"
#include "m2r/model.hpp"
#include "m2r/train.hpp"

namespace m2r {

enum class PriorKind { learned, oracle };

struct RunConfig {
    std::uint64_t seed = 7;
    std::string corpus = "corpus";  // directory holding train/ and val/
    CorpusConfig data;
    ModelConfig model;
    TrainConfig train;
    PriorKind prior = PriorKind::learned;
    PriorTrainConfig prior_train;
    double prior_smoothing = 0.02;  // oracle label smoothing

    // Source lines as given, plus any overrides applied afterwards.
    std::string text;

    // ConfigError naming the key (or line) on any problem.
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);

    // Sets one key and appends it to `text`, so reparsing `text` reproduces
    // this configuration.
    void override_value(const std::string& key, const std::string& value);

    // Every key with its effective value, one per line, in a fixed order.
    std::string resolved() const;
    void validate() const;

    static std::vector<std::string> keys();
};

}  // namespace m2r
