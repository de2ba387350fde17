#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spatext {

// Raised for malformed user input: scenes, prompts, configs, flags.
// Everything else that goes wrong surfaces as std::runtime_error.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense NCHW float tensor. Vectors are stored as [N, C, 1, 1].
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w, float fill = 0.0f)
        : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {
        if (n < 0 || c < 0 || h < 0 || w < 0) {
            throw std::invalid_argument("tensor dimensions must be non-negative");
        }
    }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }
    std::size_t sample_size() const { return static_cast<std::size_t>(c_) * h_ * w_; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }
    std::vector<float>& storage() { return data_; }
    const std::vector<float>& storage() const { return data_; }

    float* sample(int i) { return data_.data() + static_cast<std::size_t>(i) * sample_size(); }
    const float* sample(int i) const { return data_.data() + static_cast<std::size_t>(i) * sample_size(); }

    float& at(int n, int c, int y, int x) {
        return data_[((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x];
    }
    float at(int n, int c, int y, int x) const {
        return data_[((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x];
    }

    bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
    std::string shape_string() const;

    void fill(float v);

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<float> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Concatenate along channels: [N, Ca, H, W] ++ [N, Cb, H, W].
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Copy sample `i` of `src` into a [1, C, H, W] tensor.
Tensor slice_sample(const Tensor& src, int i);
void assign_sample(Tensor& dst, int i, const Tensor& src_single);

}  // namespace spatext
