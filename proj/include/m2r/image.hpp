#pragma once

// RGB images in planar [3, H, W] layout with values in [0, 1], binary PPM
// (P6, maxval 255) I/O, and conversion to and from batched tensors.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "m2r/tensor.hpp"

namespace m2r {

struct Image {
    std::size_t height = 0, width = 0;
    std::vector<float> pixels;  // planar RGB, size 3 * height * width

    Image() = default;
    Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(3 * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
    std::size_t plane() const { return height * width; }
};

// Rounds to 8 bits; values are clamped to [0, 1] first.
void write_ppm(const std::string& path, const Image& image);
// Throws FormatError on anything but a well-formed 8-bit P6 file.
Image read_ppm(const std::string& path);

// Snaps every value to the nearest multiple of 1/255, i.e. what a PPM round
// trip yields.
Image quantize(const Image& image);

void clamp_unit(Image& image);

// Images must share one size. Result is [B, 3, H, W].
template <typename T>
Tensor<T> stack_images(std::span<const Image* const> images);

// Extracts image b of a [B, 3, H, W] tensor.
template <typename T>
Image image_from_tensor(const Tensor<T>& batch, std::size_t b);

// Mirror padding (without edge repeat) up to the given size.
Image reflect_pad(const Image& image, std::size_t height, std::size_t width);
Image crop(const Image& image, std::size_t height, std::size_t width);

}  // namespace m2r
