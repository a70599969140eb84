#include "m2r/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "m2r/errors.hpp"

namespace m2r {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    return out;
}

std::size_t to_size(const std::string& s) {
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument("expected a non-negative integer");
    return v;
}

std::uint64_t to_u64(const std::string& s) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument("expected a non-negative integer");
    return v;
}

double to_double(const std::string& s) {
    double v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument("expected a number");
    return v;
}

bool to_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("expected true or false");
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Range to_range(const std::string& s) {
    const auto parts = split_list(s);
    if (parts.size() != 2) throw std::invalid_argument("expected 'lo, hi'");
    return {to_double(parts[0]), to_double(parts[1])};
}

std::string fmt(const Range& r) { return fmt(r.lo) + ", " + fmt(r.hi); }

std::vector<std::size_t> to_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& part : split_list(s)) out.push_back(to_size(part));
    return out;
}

std::string fmt(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t x : v) out += (out.empty() ? "" : ", ") + std::to_string(x);
    return out;
}

struct Key {
    std::string name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define M2R_SIZE(key, field) \
    Key { key, [](RunConfig& c, const std::string& v) { c.field = to_size(v); }, [](const RunConfig& c) { return std::to_string(c.field); } }
#define M2R_DOUBLE(key, field) \
    Key { key, [](RunConfig& c, const std::string& v) { c.field = to_double(v); }, [](const RunConfig& c) { return fmt(c.field); } }
#define M2R_BOOL(key, field) \
    Key { key, [](RunConfig& c, const std::string& v) { c.field = to_bool(v); }, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); } }
#define M2R_RANGE(key, field) \
    Key { key, [](RunConfig& c, const std::string& v) { c.field = to_range(v); }, [](const RunConfig& c) { return fmt(c.field); } }

const std::vector<Key>& key_table() {
    static const std::vector<Key> table = {
        Key{"seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
        Key{"corpus", [](RunConfig& c, const std::string& v) { c.corpus = v; },
            [](const RunConfig& c) { return c.corpus; }},

        Key{"data.types",
            [](RunConfig& c, const std::string& v) {
                c.data.types.clear();
                for (const auto& name : split_list(v)) {
                    const Degradation t = degradation_from_string(name);
                    if (t == Degradation::unknown) throw std::invalid_argument("'unknown' cannot be synthesized");
                    c.data.types.push_back(t);
                }
            },
            [](const RunConfig& c) {
                std::string out;
                for (auto t : c.data.types) out += (out.empty() ? "" : ", ") + to_string(t);
                return out;
            }},
        M2R_SIZE("data.train_per_type", data.train_per_type),
        M2R_SIZE("data.val_per_type", data.val_per_type),
        M2R_SIZE("data.height", data.height),
        M2R_SIZE("data.width", data.width),
        Key{"data.seed", [](RunConfig& c, const std::string& v) { c.data.seed = to_u64(v); },
            [](const RunConfig& c) { return std::to_string(c.data.seed); }},
        M2R_RANGE("rain.count", data.params.rain.count),
        M2R_RANGE("rain.length", data.params.rain.length),
        M2R_RANGE("rain.angle", data.params.rain.angle),
        M2R_RANGE("rain.intensity", data.params.rain.intensity),
        M2R_RANGE("rain.width", data.params.rain.width),
        M2R_RANGE("snow.count", data.params.snow.count),
        M2R_RANGE("snow.radius", data.params.snow.radius),
        M2R_RANGE("snow.opacity", data.params.snow.opacity),
        M2R_RANGE("haze.transmission", data.params.haze.transmission),
        M2R_RANGE("haze.airlight", data.params.haze.airlight),
        M2R_RANGE("raindrop.count", data.params.raindrop.count),
        M2R_RANGE("raindrop.radius", data.params.raindrop.radius),
        M2R_RANGE("raindrop.blur", data.params.raindrop.blur),
        M2R_RANGE("raindrop.lift", data.params.raindrop.lift),

        Key{"model.channels", [](RunConfig& c, const std::string& v) { c.model.channels = to_sizes(v); },
            [](const RunConfig& c) { return fmt(c.model.channels); }},
        Key{"model.blocks", [](RunConfig& c, const std::string& v) { c.model.blocks = to_sizes(v); },
            [](const RunConfig& c) { return fmt(c.model.blocks); }},
        M2R_SIZE("model.decoder_blocks", model.decoder_blocks),
        M2R_SIZE("model.heads", model.heads),
        M2R_DOUBLE("model.expansion", model.expansion),
        M2R_SIZE("model.experts", model.experts),
        M2R_SIZE("model.top_k", model.top_k),
        M2R_DOUBLE("model.expert_expansion", model.expert_expansion),
        M2R_SIZE("model.prompts", model.prompts),
        M2R_SIZE("model.prompt_width", model.prompt_width),
        M2R_SIZE("model.prompt_hidden", model.prompt_hidden),
        M2R_SIZE("model.classes", model.classes),
        M2R_SIZE("model.prior_width", model.prior_width),
        M2R_SIZE("model.ssm_state", model.ssm_state),
        M2R_SIZE("model.ssm_expand", model.ssm_expand),
        M2R_DOUBLE("model.lambda", model.lambda),
        M2R_DOUBLE("model.eps_stab", model.eps_stab),
        Key{"model.variant", [](RunConfig& c, const std::string& v) { c.model.variant = variant_from_string(v); },
            [](const RunConfig& c) { return to_string(c.model.variant); }},

        M2R_DOUBLE("train.lr", train.adam.lr),
        M2R_DOUBLE("train.beta1", train.adam.beta1),
        M2R_DOUBLE("train.beta2", train.adam.beta2),
        M2R_DOUBLE("train.eps", train.adam.eps),
        M2R_SIZE("train.micro_batch", train.micro_batch),
        M2R_SIZE("train.accumulation", train.accumulation),
        M2R_SIZE("train.steps", train.steps),
        M2R_BOOL("train.router_noise", train.router_noise),
        M2R_BOOL("train.flips", train.flips),
        M2R_SIZE("train.checkpoint_every", train.checkpoint_every),

        Key{"prior.kind",
            [](RunConfig& c, const std::string& v) {
                if (v == "learned") c.prior = PriorKind::learned;
                else if (v == "oracle") c.prior = PriorKind::oracle;
                else throw std::invalid_argument("expected learned or oracle");
            },
            [](const RunConfig& c) { return std::string(c.prior == PriorKind::learned ? "learned" : "oracle"); }},
        M2R_SIZE("prior.steps", prior_train.steps),
        M2R_SIZE("prior.batch", prior_train.batch),
        M2R_DOUBLE("prior.lr", prior_train.lr),
        M2R_DOUBLE("prior.smoothing", prior_smoothing),
    };
    return table;
}

#undef M2R_SIZE
#undef M2R_DOUBLE
#undef M2R_BOOL
#undef M2R_RANGE

void apply(RunConfig& config, const std::string& key, const std::string& value) {
    for (const auto& k : key_table()) {
        if (k.name != key) continue;
        try {
            k.set(config, value);
        } catch (const std::exception& e) {
            throw ConfigError("config key '" + key + "': invalid value '" + value + "' (" + e.what() + ")");
        }
        return;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& k : key_table()) out.push_back(k.name);
    return out;
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig config;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(number) + ": expected 'key = value'");
        apply(config, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    }
    config.text = text;
    config.validate();
    return config;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse(text.str());
}

void RunConfig::override_value(const std::string& key, const std::string& value) {
    apply(*this, key, value);
    if (!text.empty() && text.back() != '\n') text += '\n';
    text += key + " = " + value + "\n";
    validate();
}

std::string RunConfig::resolved() const {
    std::string out;
    for (const auto& k : key_table()) out += k.name + " = " + k.get(*this) + "\n";
    return out;
}

void RunConfig::validate() const {
    data.validate();
    model.validate();
    train.validate();
    if (model.classes < kDegradationClasses)
        throw ConfigError("config key 'model.classes': must cover all " + std::to_string(kDegradationClasses) +
                          " degradation classes");
    if (prior_train.batch == 0) throw ConfigError("config key 'prior.batch': must be >= 1");
}

}  // namespace m2r
