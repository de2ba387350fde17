#include "spatext/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace spatext {
namespace {

std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::vector<std::uint8_t> write_memory(const void* buffer, int height, int width, png_uint_32 format) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = format;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, buffer, 0, nullptr)) {
        throw std::runtime_error(std::string("png encode failed: ") + img.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, buffer, 0, nullptr)) {
        throw std::runtime_error(std::string("png encode failed: ") + img.message);
    }
    out.resize(size);
    return out;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, png_uint_32 format, int& height, int& width) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        throw std::runtime_error("cannot read png " + path.string() + ": " + img.message);
    }
    img.format = format;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&img);
        throw std::runtime_error("cannot decode png " + path.string() + ": " + img.message);
    }
    height = static_cast<int>(img.height);
    width = static_cast<int>(img.width);
    return buffer;
}

}  // namespace

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

Tensor images_to_tensor(const std::vector<Image>& images) {
    if (images.empty()) return {};
    const int h = images.front().height, w = images.front().width;
    Tensor t(static_cast<int>(images.size()), 3, h, w);
    for (std::size_t n = 0; n < images.size(); ++n) {
        if (images[n].height != h || images[n].width != w) throw std::invalid_argument("images differ in size");
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), c, y, x) = 2.0f * images[n].at(y, x, c) - 1.0f;
    }
    return t;
}

Image tensor_to_image(const Tensor& t, int n) {
    if (t.c() != 3) throw std::invalid_argument("tensor_to_image: expected 3 channels");
    Image img(t.h(), t.w());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < t.h(); ++y)
            for (int x = 0; x < t.w(); ++x) img.at(y, x, c) = std::clamp((t.at(n, c, y, x) + 1.0f) * 0.5f, 0.0f, 1.0f);
    return img;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    std::vector<std::uint8_t> raw(image.pixels.size());
    std::transform(image.pixels.begin(), image.pixels.end(), raw.begin(), to_byte);
    return write_memory(raw.data(), image.height, image.width, PNG_FORMAT_RGB);
}

void write_png(const std::filesystem::path& path, const Image& image) { write_file(path, encode_png(image)); }

Image read_png(const std::filesystem::path& path) {
    int h = 0, w = 0;
    const auto raw = read_raw(path, PNG_FORMAT_RGB, h, w);
    Image img(h, w);
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0f;
    return img;
}

void write_label_png(const std::filesystem::path& path, int height, int width, const std::vector<int>& labels) {
    if (labels.size() != static_cast<std::size_t>(height) * width) throw std::invalid_argument("label map size");
    std::vector<std::uint8_t> raw(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] > 255) throw std::invalid_argument("label out of 8-bit range");
        raw[i] = static_cast<std::uint8_t>(labels[i]);
    }
    write_file(path, write_memory(raw.data(), height, width, PNG_FORMAT_GRAY));
}

std::vector<int> read_label_png(const std::filesystem::path& path, int& height, int& width) {
    const auto raw = read_raw(path, PNG_FORMAT_GRAY, height, width);
    return {raw.begin(), raw.end()};
}

Interpolation parse_interpolation(const std::string& name) {
    if (name == "bilinear") return Interpolation::Bilinear;
    if (name == "nearest") return Interpolation::Nearest;
    throw ValidationError("unknown interpolation '" + name + "' (expected bilinear or nearest)");
}

std::string to_string(Interpolation interp) { return interp == Interpolation::Bilinear ? "bilinear" : "nearest"; }

Image resize(const Image& image, int height, int width, Interpolation interp) {
    if (image.empty() || height <= 0 || width <= 0) throw std::invalid_argument("resize: empty image or target");
    if (image.height == height && image.width == width) return image;
    Image out(height, width);
    const double sy = static_cast<double>(image.height) / height;
    const double sx = static_cast<double>(image.width) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
            if (interp == Interpolation::Nearest) {
                const int ny = std::min(static_cast<int>((y + 0.5) * sy), image.height - 1);
                const int nx = std::min(static_cast<int>((x + 0.5) * sx), image.width - 1);
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(ny, nx, c);
                continue;
            }
            const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            const int y1 = std::min(y0 + 1, image.height - 1), x1 = std::min(x0 + 1, image.width - 1);
            const double wy = fy - y0, wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
                const double bottom = (1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bottom);
            }
        }
    }
    return out;
}

Image quantize(const Image& image) {
    Image out = image;
    for (float& v : out.pixels) v = to_byte(v) / 255.0f;
    return out;
}

}  // namespace spatext
