#include "m2r/image.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cmath>
#include <fstream>
#include <iterator>

#include "m2r/errors.hpp"

namespace m2r {

namespace {

std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Reads the next whitespace-separated header token, skipping # comments.
std::string header_token(const std::vector<char>& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        const char c = bytes[pos];
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    std::string token;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) token += bytes[pos++];
    return token;
}

std::size_t header_number(const std::vector<char>& bytes, std::size_t& pos, const std::string& path) {
    const std::string token = header_token(bytes, pos);
    if (token.empty() || !std::all_of(token.begin(), token.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        throw FormatError(path + ": malformed PPM header");
    return std::stoul(token);
}

}  // namespace

void write_ppm(const std::string& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<char> body(3 * image.plane());
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                body[(y * image.width + x) * 3 + c] = static_cast<char>(to_byte(image.at(c, y, x)));
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw Error("failed writing " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open image " + path);
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    if (header_token(bytes, pos) != "P6") throw FormatError(path + ": not a binary PPM (P6) file");
    const std::size_t width = header_number(bytes, pos, path);
    const std::size_t height = header_number(bytes, pos, path);
    const std::size_t maxval = header_number(bytes, pos, path);
    if (width == 0 || height == 0 || maxval != 255) throw FormatError(path + ": only 8-bit P6 images are supported");
    ++pos;  // single whitespace byte before the raster
    if (bytes.size() < pos + 3 * width * height) throw FormatError(path + ": truncated raster");
    Image image(height, width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                image.at(c, y, x) = static_cast<float>(static_cast<std::uint8_t>(bytes[pos + (y * width + x) * 3 + c])) / 255.0f;
    return image;
}

Image quantize(const Image& image) {
    Image out = image;
    for (float& v : out.pixels) v = static_cast<float>(to_byte(v)) / 255.0f;
    return out;
}

void clamp_unit(Image& image) {
    for (float& v : image.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

template <typename T>
Tensor<T> stack_images(std::span<const Image* const> images) {
    if (images.empty()) throw ContractError("stack_images: empty batch");
    const std::size_t h = images.front()->height, w = images.front()->width;
    std::vector<T> data;
    data.reserve(images.size() * 3 * h * w);
    for (const Image* img : images) {
        if (img->height != h || img->width != w) throw DimensionError("stack_images: images differ in size");
        for (float v : img->pixels) data.push_back(static_cast<T>(v));
    }
    return Tensor<T>({images.size(), 3, h, w}, std::move(data));
}

template <typename T>
Image image_from_tensor(const Tensor<T>& batch, std::size_t b) {
    if (batch.rank() != 4 || batch.dim(1) != 3 || b >= batch.dim(0))
        throw DimensionError("image_from_tensor: bad tensor " + to_string(batch.shape()));
    Image out(batch.dim(2), batch.dim(3));
    const auto src = batch.data().subspan(b * out.pixels.size(), out.pixels.size());
    std::transform(src.begin(), src.end(), out.pixels.begin(), [](T v) { return static_cast<float>(v); });
    return out;
}

namespace {
std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n) - 2;
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}
}  // namespace

Image reflect_pad(const Image& image, std::size_t height, std::size_t width) {
    if (height < image.height || width < image.width) throw ContractError("reflect_pad: target smaller than image");
    Image out(height, width);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x)
                out.at(c, y, x) = image.at(c, mirror(static_cast<std::ptrdiff_t>(y), image.height),
                                           mirror(static_cast<std::ptrdiff_t>(x), image.width));
    return out;
}

Image crop(const Image& image, std::size_t height, std::size_t width) {
    if (height > image.height || width > image.width) throw ContractError("crop: target larger than image");
    Image out(height, width);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, y, x);
    return out;
}

template Tensor<float> stack_images(std::span<const Image* const>);
template Tensor<double> stack_images(std::span<const Image* const>);
template Image image_from_tensor(const Tensor<float>&, std::size_t);
template Image image_from_tensor(const Tensor<double>&, std::size_t);

}  // namespace m2r
