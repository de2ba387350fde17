#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spatext/tensor.hpp"

namespace spatext {

// H x W x 3 image, row-major, interleaved RGB, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool empty() const { return pixels.empty(); }
};

// Boolean H x W grid.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

    bool at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int y, int x, bool v = true) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    std::size_t count() const;
    bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }
    bool operator==(const Mask& o) const = default;
};

// Per-sample [-1, 1] channels-first batch.
Tensor images_to_tensor(const std::vector<Image>& images);
// Sample `n` of a [-1, 1] tensor back to a clamped [0, 1] image.
Image tensor_to_image(const Tensor& t, int n);

std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// 8-bit single-channel label maps.
void write_label_png(const std::filesystem::path& path, int height, int width, const std::vector<int>& labels);
std::vector<int> read_label_png(const std::filesystem::path& path, int& height, int& width);

enum class Interpolation { Bilinear, Nearest };

Interpolation parse_interpolation(const std::string& name);
std::string to_string(Interpolation interp);

// Half-pixel-centered resampling with edge clamping.
Image resize(const Image& image, int height, int width, Interpolation interp);

// Exact 8-bit round trip of an image (what a PNG on disk holds).
Image quantize(const Image& image);

}  // namespace spatext
