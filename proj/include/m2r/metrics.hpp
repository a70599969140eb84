#pragma once

// Image-quality and clustering metrics used by evaluation and routing analysis.

#include <cstddef>
#include <span>
#include <vector>

#include "m2r/image.hpp"

namespace m2r {

// 10 log10(peak^2 / MSE) in dB; +infinity when the inputs are identical.
double psnr(std::span<const float> a, std::span<const float> b, double peak = 1.0);
double psnr(const Image& a, const Image& b, double peak = 1.0);

// SSIM on the channel-mean grayscale image: 8x8 windows at stride 4,
// population statistics, c1 = (0.01 peak)^2, c2 = (0.03 peak)^2, averaged
// over windows. ContractError if the image is smaller than a window.
double ssim(const Image& a, const Image& b, double peak = 1.0);

// Mean silhouette with Euclidean distance. Needs at least two labels with at
// least two members each (ContractError otherwise). A point whose intra- and
// nearest-cluster distances are both zero scores 0.
double silhouette(const std::vector<std::vector<double>>& points, const std::vector<std::size_t>& labels);

// Cosine similarity; 0 when either vector is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace m2r
