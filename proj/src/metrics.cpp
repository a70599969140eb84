#include "m2r/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "m2r/errors.hpp"

namespace m2r {

double psnr(std::span<const float> a, std::span<const float> b, double peak) {
    if (a.size() != b.size() || a.empty()) throw DimensionError("psnr: inputs differ in size");
    double sse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sse += d * d;
    }
    if (sse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / (sse / static_cast<double>(a.size())));
}

double psnr(const Image& a, const Image& b, double peak) {
    if (a.height != b.height || a.width != b.width) throw DimensionError("psnr: images differ in size");
    return psnr(a.pixels, b.pixels, peak);
}

namespace {

std::vector<double> grayscale(const Image& img) {
    std::vector<double> g(img.plane());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = (static_cast<double>(img.pixels[i]) + static_cast<double>(img.pixels[img.plane() + i]) +
                static_cast<double>(img.pixels[2 * img.plane() + i])) /
               3.0;
    return g;
}

}  // namespace

double ssim(const Image& a, const Image& b, double peak) {
    constexpr std::size_t kWindow = 8, kStride = 4;
    if (a.height != b.height || a.width != b.width) throw DimensionError("ssim: images differ in size");
    if (a.height < kWindow || a.width < kWindow) throw ContractError("ssim: image smaller than the 8x8 window");
    const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
    const std::vector<double> ga = grayscale(a), gb = grayscale(b);
    const double n = static_cast<double>(kWindow * kWindow);
    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t y0 = 0; y0 + kWindow <= a.height; y0 += kStride)
        for (std::size_t x0 = 0; x0 + kWindow <= a.width; x0 += kStride) {
            double sa = 0, sb = 0;
            for (std::size_t y = y0; y < y0 + kWindow; ++y)
                for (std::size_t x = x0; x < x0 + kWindow; ++x) {
                    sa += ga[y * a.width + x];
                    sb += gb[y * a.width + x];
                }
            const double ma = sa / n, mb = sb / n;
            double vaa = 0, vbb = 0, vab = 0;
            for (std::size_t y = y0; y < y0 + kWindow; ++y)
                for (std::size_t x = x0; x < x0 + kWindow; ++x) {
                    const double da = ga[y * a.width + x] - ma, db = gb[y * a.width + x] - mb;
                    vaa += da * da;
                    vbb += db * db;
                    vab += da * db;
                }
            vaa /= n;
            vbb /= n;
            vab /= n;
            total += ((2 * ma * mb + c1) * (2 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
            ++windows;
        }
    return total / static_cast<double>(windows);
}

double silhouette(const std::vector<std::vector<double>>& points, const std::vector<std::size_t>& labels) {
    if (points.size() != labels.size()) throw DimensionError("silhouette: points and labels differ in count");
    std::map<std::size_t, std::size_t> sizes;
    for (std::size_t l : labels) ++sizes[l];
    if (sizes.size() < 2) throw ContractError("silhouette needs at least two labels");
    for (const auto& [label, size] : sizes)
        if (size < 2) throw ContractError("silhouette: label " + std::to_string(label) + " has fewer than two members");
    const auto dist = [&](std::size_t i, std::size_t j) {
        if (points[i].size() != points[j].size()) throw DimensionError("silhouette: vectors differ in length");
        double s = 0;
        for (std::size_t d = 0; d < points[i].size(); ++d) s += (points[i][d] - points[j][d]) * (points[i][d] - points[j][d]);
        return std::sqrt(s);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        std::map<std::size_t, double> sums;
        for (std::size_t j = 0; j < points.size(); ++j)
            if (j != i) sums[labels[j]] += dist(i, j);
        const double a = sums[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, sum] : sums)
            if (label != labels[i]) b = std::min(b, sum / static_cast<double>(sizes[label]));
        const double denom = std::max(a, b);
        total += denom == 0.0 ? 0.0 : (b - a) / denom;
    }
    return total / static_cast<double>(points.size());
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("cosine_similarity: vectors differ in length");
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

}  // namespace m2r
