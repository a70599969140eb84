#include "m2r/corpus.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "m2r/errors.hpp"

namespace m2r {

namespace fs = std::filesystem;

double Range::sample(Rng& rng) const {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

namespace {

void check_range(const Range& r, const std::string& name, double min, double max) {
    if (!(r.lo <= r.hi) || r.lo < min || r.hi > max)
        throw ConfigError("degradation range " + name + " = [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) +
                          "] outside [" + std::to_string(min) + ", " + std::to_string(max) + "] or inverted");
}

constexpr double kHuge = 1e9;

float soft_disk(double dist, double radius) {
    return static_cast<float>(std::clamp(radius + 0.5 - dist, 0.0, 1.0));
}

// Separable Gaussian blur with clamped borders.
Image gaussian_blur(const Image& src, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> taps(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) total += taps[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
    for (float& t : taps) t = static_cast<float>(t / total);
    const auto clampi = [](int v, std::size_t n) { return static_cast<std::size_t>(std::clamp(v, 0, static_cast<int>(n) - 1)); };
    Image tmp(src.height, src.width), out(src.height, src.width);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < src.height; ++y)
            for (std::size_t x = 0; x < src.width; ++x) {
                float acc = 0;
                for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * src.at(c, y, clampi(static_cast<int>(x) + i, src.width));
                tmp.at(c, y, x) = acc;
            }
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < src.height; ++y)
            for (std::size_t x = 0; x < src.width; ++x) {
                float acc = 0;
                for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * tmp.at(c, clampi(static_cast<int>(y) + i, src.height), x);
                out.at(c, y, x) = acc;
            }
    return out;
}

double value(const DegradeSpec& spec, const std::string& key) {
    const auto it = spec.values.find(key);
    if (it == spec.values.end()) throw FormatError("degradation " + to_string(spec.type) + " lacks value '" + key + "'");
    return it->second;
}

std::size_t count_of(const DegradeSpec& spec) {
    return static_cast<std::size_t>(std::max(0.0, std::round(value(spec, "count"))));
}

Image apply_rain(const Image& clean, const DegradeSpec& spec) {
    Rng rng(spec.seed);
    const std::size_t count = count_of(spec);
    const double length = value(spec, "length");
    const double angle = value(spec, "angle") * std::numbers::pi / 180.0;
    const double intensity = value(spec, "intensity");
    const double width = value(spec, "width");
    const double dx = std::sin(angle), dy = std::cos(angle);
    std::vector<float> overlay(clean.plane(), 0.0f);
    std::uniform_real_distribution<double> ux(-length / 2, static_cast<double>(clean.width) + length / 2);
    std::uniform_real_distribution<double> uy(-length / 2, static_cast<double>(clean.height) + length / 2);
    std::uniform_real_distribution<double> jitter(0.7, 1.0);
    const double reach = length / 2 + 3.0 * width;
    for (std::size_t s = 0; s < count; ++s) {
        const double cx = ux(rng), cy = uy(rng), gain = intensity * jitter(rng);
        const auto y0 = static_cast<long>(std::floor(cy - reach)), y1 = static_cast<long>(std::ceil(cy + reach));
        const auto x0 = static_cast<long>(std::floor(cx - reach)), x1 = static_cast<long>(std::ceil(cx + reach));
        for (long y = std::max(0L, y0); y <= std::min<long>(y1, static_cast<long>(clean.height) - 1); ++y)
            for (long x = std::max(0L, x0); x <= std::min<long>(x1, static_cast<long>(clean.width) - 1); ++x) {
                const double px = static_cast<double>(x) - cx, py = static_cast<double>(y) - cy;
                const double along = std::clamp(px * dx + py * dy, -length / 2, length / 2);
                const double ex = px - along * dx, ey = py - along * dy;
                overlay[static_cast<std::size_t>(y) * clean.width + static_cast<std::size_t>(x)] +=
                    static_cast<float>(gain * std::exp(-(ex * ex + ey * ey) / (2 * width * width)));
            }
    }
    Image out = clean;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < clean.plane(); ++i) out.pixels[c * clean.plane() + i] += overlay[i];
    clamp_unit(out);
    return out;
}

Image apply_snow(const Image& clean, const DegradeSpec& spec) {
    Rng rng(spec.seed);
    const std::size_t count = count_of(spec);
    const Range radius{value(spec, "radius_min"), value(spec, "radius_max")};
    const auto opacity = static_cast<float>(value(spec, "opacity"));
    std::uniform_real_distribution<double> ux(0, static_cast<double>(clean.width));
    std::uniform_real_distribution<double> uy(0, static_cast<double>(clean.height));
    Image out = clean;
    for (std::size_t f = 0; f < count; ++f) {
        const double cx = ux(rng), cy = uy(rng), r = radius.sample(rng);
        for (long y = std::max(0L, static_cast<long>(cy - r - 1)); y <= std::min<long>(static_cast<long>(cy + r + 1), static_cast<long>(clean.height) - 1); ++y)
            for (long x = std::max(0L, static_cast<long>(cx - r - 1)); x <= std::min<long>(static_cast<long>(cx + r + 1), static_cast<long>(clean.width) - 1); ++x) {
                const float a = opacity * soft_disk(std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy), r);
                if (a <= 0.0f) continue;
                for (std::size_t c = 0; c < 3; ++c) {
                    float& p = out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                    p = p * (1.0f - a) + a;
                }
            }
    }
    clamp_unit(out);
    return out;
}

Image apply_haze(const Image& clean, const DegradeSpec& spec) {
    const auto t = static_cast<float>(value(spec, "transmission"));
    const auto airlight = static_cast<float>(value(spec, "airlight"));
    Image out = clean;
    for (float& p : out.pixels) p = p * t + airlight * (1.0f - t);
    clamp_unit(out);
    return out;
}

Image apply_raindrop(const Image& clean, const DegradeSpec& spec) {
    Rng rng(spec.seed);
    const std::size_t count = count_of(spec);
    if (count == 0) return clean;
    const Range radius{value(spec, "radius_min"), value(spec, "radius_max")};
    const auto lift = static_cast<float>(value(spec, "lift"));
    const Image blurred = gaussian_blur(clean, value(spec, "blur"));
    std::uniform_real_distribution<double> ux(0, static_cast<double>(clean.width));
    std::uniform_real_distribution<double> uy(0, static_cast<double>(clean.height));
    Image out = clean;
    for (std::size_t d = 0; d < count; ++d) {
        const double cx = ux(rng), cy = uy(rng), r = radius.sample(rng);
        for (long y = std::max(0L, static_cast<long>(cy - r - 1)); y <= std::min<long>(static_cast<long>(cy + r + 1), static_cast<long>(clean.height) - 1); ++y)
            for (long x = std::max(0L, static_cast<long>(cx - r - 1)); x <= std::min<long>(static_cast<long>(cx + r + 1), static_cast<long>(clean.width) - 1); ++x) {
                const float m = soft_disk(std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy), r);
                if (m <= 0.0f) continue;
                const auto ys = static_cast<std::size_t>(y), xs = static_cast<std::size_t>(x);
                for (std::size_t c = 0; c < 3; ++c) {
                    float& p = out.at(c, ys, xs);
                    p = p * (1.0f - m) + m * (blurred.at(c, ys, xs) + lift);
                }
            }
    }
    clamp_unit(out);
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void DegradeParams::validate() const {
    check_range(rain.count, "rain.count", 0, kHuge);
    check_range(rain.length, "rain.length", 0, kHuge);
    check_range(rain.angle, "rain.angle", -90, 90);
    check_range(rain.intensity, "rain.intensity", 0, 1);
    check_range(rain.width, "rain.width", 1e-3, kHuge);
    check_range(snow.count, "snow.count", 0, kHuge);
    check_range(snow.radius, "snow.radius", 0, kHuge);
    check_range(snow.opacity, "snow.opacity", 0, 1);
    check_range(haze.transmission, "haze.transmission", 0, 1);
    check_range(haze.airlight, "haze.airlight", 0, 1);
    check_range(raindrop.count, "raindrop.count", 0, kHuge);
    check_range(raindrop.radius, "raindrop.radius", 0, kHuge);
    check_range(raindrop.blur, "raindrop.blur", 1e-3, kHuge);
    check_range(raindrop.lift, "raindrop.lift", 0, 1);
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
    const auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t h = mix(base);
    for (std::uint64_t p : parts) h = mix(h ^ p);
    return h;
}

Image synth_clean(std::uint64_t seed, std::size_t height, std::size_t width) {
    if (height < 16 || width < 16) throw ContractError("synth_clean needs images of at least 16x16");
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto colour = [&](double lo, double hi) {
        return std::array<double, 3>{lo + (hi - lo) * unit(rng), lo + (hi - lo) * unit(rng), lo + (hi - lo) * unit(rng)};
    };
    Image img(height, width);
    const auto top = colour(0.3, 0.9), bottom = colour(0.1, 0.7);
    for (std::size_t y = 0; y < height; ++y) {
        const double s = static_cast<double>(y) / static_cast<double>(height - 1);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t x = 0; x < width; ++x) img.at(c, y, x) = static_cast<float>(top[c] * (1 - s) + bottom[c] * s);
    }
    const double h = static_cast<double>(height), w = static_cast<double>(width);
    const int rects = 3 + static_cast<int>(unit(rng) * 4);
    for (int r = 0; r < rects; ++r) {
        const auto col = colour(0.0, 1.0);
        const double rw = w * (0.1 + 0.4 * unit(rng)), rh = h * (0.1 + 0.4 * unit(rng));
        const double x0 = unit(rng) * (w - rw), y0 = unit(rng) * (h - rh);
        for (std::size_t y = static_cast<std::size_t>(y0); y < static_cast<std::size_t>(y0 + rh); ++y)
            for (std::size_t x = static_cast<std::size_t>(x0); x < static_cast<std::size_t>(x0 + rw); ++x)
                for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(col[c]);
    }
    const int disks = 2 + static_cast<int>(unit(rng) * 4);
    for (int d = 0; d < disks; ++d) {
        const auto col = colour(0.0, 1.0);
        const double rad = std::min(h, w) * (0.06 + 0.18 * unit(rng));
        const double cx = unit(rng) * w, cy = unit(rng) * h;
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const float m = soft_disk(std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy), rad);
                if (m <= 0.0f) continue;
                for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = img.at(c, y, x) * (1 - m) + m * static_cast<float>(col[c]);
            }
    }
    // Oriented sinusoidal texture plus fine noise.
    const double f1 = 0.2 + 0.8 * unit(rng), f2 = 0.2 + 0.8 * unit(rng);
    const double a1 = std::numbers::pi * unit(rng), a2 = std::numbers::pi * unit(rng);
    const double p1 = 2 * std::numbers::pi * unit(rng), p2 = 2 * std::numbers::pi * unit(rng);
    std::normal_distribution<double> noise(0.0, 0.01);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const double u = static_cast<double>(x), v = static_cast<double>(y);
            const double tex = 0.04 * std::sin(f1 * (u * std::cos(a1) + v * std::sin(a1)) + p1) +
                               0.03 * std::sin(f2 * (u * std::cos(a2) + v * std::sin(a2)) + p2);
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) += static_cast<float>(tex + noise(rng));
        }
    clamp_unit(img);
    return img;
}

DegradeSpec sample_degradation(Degradation type, const DegradeParams& params, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x5eed}));
    DegradeSpec spec;
    spec.type = type;
    spec.seed = seed;
    auto& v = spec.values;
    switch (type) {
        case Degradation::rain:
            v["count"] = std::round(params.rain.count.sample(rng));
            v["length"] = params.rain.length.sample(rng);
            v["angle"] = params.rain.angle.sample(rng);
            v["intensity"] = params.rain.intensity.sample(rng);
            v["width"] = params.rain.width.sample(rng);
            break;
        case Degradation::snow:
            v["count"] = std::round(params.snow.count.sample(rng));
            v["radius_min"] = params.snow.radius.lo;
            v["radius_max"] = params.snow.radius.hi;
            v["opacity"] = params.snow.opacity.sample(rng);
            break;
        case Degradation::haze:
            v["transmission"] = params.haze.transmission.sample(rng);
            v["airlight"] = params.haze.airlight.sample(rng);
            break;
        case Degradation::raindrop:
            v["count"] = std::round(params.raindrop.count.sample(rng));
            v["radius_min"] = params.raindrop.radius.lo;
            v["radius_max"] = params.raindrop.radius.hi;
            v["blur"] = params.raindrop.blur.sample(rng);
            v["lift"] = params.raindrop.lift.sample(rng);
            break;
        default: throw ConfigError("cannot synthesize degradation type '" + to_string(type) + "'");
    }
    return spec;
}

Image apply_degradation(const Image& clean, const DegradeSpec& spec) {
    switch (spec.type) {
        case Degradation::rain: return apply_rain(clean, spec);
        case Degradation::snow: return apply_snow(clean, spec);
        case Degradation::haze: return apply_haze(clean, spec);
        case Degradation::raindrop: return apply_raindrop(clean, spec);
        default: throw ConfigError("cannot synthesize degradation type '" + to_string(spec.type) + "'");
    }
}

Image degrade(const Image& clean, Degradation type, const DegradeParams& params, std::uint64_t seed) {
    return apply_degradation(clean, sample_degradation(type, params, seed));
}

void CorpusConfig::validate() const {
    if (types.empty()) throw ConfigError("corpus needs at least one degradation type");
    for (Degradation t : types)
        if (t == Degradation::unknown) throw ConfigError("corpus cannot synthesize the 'unknown' type");
    if (height < 16 || width < 16) throw ConfigError("corpus images must be at least 16x16");
    params.validate();
}

std::vector<ManifestEntry> plan_split(const CorpusConfig& config, const std::string& split) {
    std::size_t per_type = 0;
    std::uint64_t split_tag = 0;
    if (split == "train") {
        per_type = config.train_per_type;
        split_tag = 1;
    } else if (split == "val") {
        per_type = config.val_per_type;
        split_tag = 2;
    } else {
        throw ConfigError("unknown split '" + split + "'");
    }
    std::vector<ManifestEntry> entries;
    for (Degradation type : config.types) {
        for (std::size_t i = 0; i < per_type; ++i) {
            ManifestEntry e;
            char id[64];
            std::snprintf(id, sizeof id, "%s_%s_%04zu", split.c_str(), to_string(type).c_str(), i);
            e.id = id;
            e.height = config.height;
            e.width = config.width;
            const auto t = static_cast<std::uint64_t>(type);
            e.scene_seed = derive_seed(config.seed, {split_tag, t, i, 0});
            e.degradation = sample_degradation(type, config.params, derive_seed(config.seed, {split_tag, t, i, 1}));
            entries.push_back(std::move(e));
        }
    }
    return entries;
}

Sample realize(const ManifestEntry& entry) {
    Sample s;
    s.id = entry.id;
    s.label = static_cast<std::size_t>(entry.degradation.type);
    s.seed = entry.scene_seed;
    s.clean = quantize(synth_clean(entry.scene_seed, entry.height, entry.width));
    s.degraded = quantize(apply_degradation(s.clean, entry.degradation));
    return s;
}

std::string format_manifest_line(const ManifestEntry& e) {
    std::ostringstream line;
    line << "id=" << e.id << " type=" << to_string(e.degradation.type) << " image_height=" << e.height
         << " image_width=" << e.width << " scene_seed=" << e.scene_seed << " degrade_seed=" << e.degradation.seed;
    for (const auto& [key, v] : e.degradation.values) line << ' ' << key << '=' << format_double(v);
    return line.str();
}

ManifestEntry parse_manifest_line(const std::string& line) {
    std::istringstream in(line);
    std::map<std::string, std::string> kv;
    std::string token;
    while (in >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos || eq == 0) throw FormatError("manifest: malformed token '" + token + "'");
        if (!kv.emplace(token.substr(0, eq), token.substr(eq + 1)).second)
            throw FormatError("manifest: repeated key in '" + token + "'");
    }
    const auto take = [&](const std::string& key) {
        const auto it = kv.find(key);
        if (it == kv.end()) throw FormatError("manifest line lacks '" + key + "': " + line);
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    const auto take_u64 = [&](const std::string& key) {
        const std::string v = take(key);
        std::uint64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || ptr != v.data() + v.size()) throw FormatError("manifest: bad integer for " + key);
        return out;
    };
    ManifestEntry e;
    e.id = take("id");
    try {
        e.degradation.type = degradation_from_string(take("type"));
    } catch (const ConfigError& err) {
        throw FormatError(std::string("manifest: ") + err.what());
    }
    e.height = take_u64("image_height");
    e.width = take_u64("image_width");
    e.scene_seed = take_u64("scene_seed");
    e.degradation.seed = take_u64("degrade_seed");
    for (const auto& [key, v] : kv) {
        char* end = nullptr;
        const double d = std::strtod(v.c_str(), &end);
        if (end == v.c_str() || *end != '\0') throw FormatError("manifest: bad value for " + key);
        e.degradation.values[key] = d;
    }
    return e;
}

std::map<std::string, std::size_t> write_corpus(const CorpusConfig& config, const std::string& dir) {
    config.validate();
    std::map<std::string, std::size_t> counts;
    for (const std::string split : {"train", "val"}) {
        const fs::path split_dir = fs::path(dir) / split;
        fs::create_directories(split_dir);
        std::ofstream manifest(split_dir / "manifest.txt", std::ios::binary);
        if (!manifest) throw Error("cannot write manifest in " + split_dir.string());
        for (const ManifestEntry& entry : plan_split(config, split)) {
            const Sample s = realize(entry);
            write_ppm((split_dir / (entry.id + "_clean.ppm")).string(), s.clean);
            write_ppm((split_dir / (entry.id + "_degraded.ppm")).string(), s.degraded);
            manifest << format_manifest_line(entry) << '\n';
            ++counts[to_string(entry.degradation.type)];
        }
    }
    return counts;
}

std::vector<ManifestEntry> read_manifest(const std::string& split_dir) {
    const fs::path path = fs::path(split_dir) / "manifest.txt";
    std::ifstream in(path);
    if (!in) throw FormatError("missing manifest " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) entries.push_back(parse_manifest_line(line));
    return entries;
}

std::vector<Sample> load_split(const std::string& split_dir) {
    std::vector<Sample> samples;
    for (const ManifestEntry& entry : read_manifest(split_dir)) {
        Sample s;
        s.id = entry.id;
        s.label = static_cast<std::size_t>(entry.degradation.type);
        s.seed = entry.scene_seed;
        s.clean = read_ppm((fs::path(split_dir) / (entry.id + "_clean.ppm")).string());
        s.degraded = read_ppm((fs::path(split_dir) / (entry.id + "_degraded.ppm")).string());
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace m2r
