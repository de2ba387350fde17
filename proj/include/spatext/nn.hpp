#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "spatext/kernels.hpp"
#include "spatext/tensor.hpp"

namespace spatext::nn {

struct Param {
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;

    Param() = default;
    explicit Param(std::vector<int> dims);

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

struct NamedParam {
    std::string name;
    Param* param;
};

using ParamVisitor = std::function<void(const std::string&, Param&)>;

// Fills with N(0, 2 / fan_in).
void he_normal(std::span<float> values, int fan_in, std::mt19937_64& rng);

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad);

    void init(std::mt19937_64& rng, float gain = 1.0f);
    Tensor forward(const Tensor& x) const;
    // Accumulates parameter gradients; returns dx unless need_dx is false.
    Tensor backward(const Tensor& x, const Tensor& dy, bool need_dx = true);
    void visit(const std::string& prefix, const ParamVisitor& f);

    const kernels::ConvShape& shape() const { return shape_; }
    // Resize the input side; used by channel extension.
    void set_shape(const kernels::ConvShape& s) { shape_ = s; }

    Param weight;
    Param bias;

private:
    kernels::ConvShape shape_;
};

// y[n, o] = b[o] + sum_i W[o, i] x[n, i]; inputs are [N, in, 1, 1].
class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features);

    void init(std::mt19937_64& rng, float gain = 1.0f);
    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& x, const Tensor& dy);
    void visit(const std::string& prefix, const ParamVisitor& f);

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    Param weight;
    Param bias;

private:
    int in_ = 0, out_ = 0;
};

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
};

class Adam {
public:
    explicit Adam(AdamConfig config) : config_(config) {}
    // Returns the pre-clip global gradient norm.
    double step(const std::vector<NamedParam>& params);
    long steps() const { return t_; }
    void set_learning_rate(double lr) { config_.learning_rate = lr; }

private:
    AdamConfig config_;
    long t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

std::vector<NamedParam> collect(const std::function<void(const ParamVisitor&)>& visit_all);

}  // namespace spatext::nn
