#include "spatext/nn.hpp"

#include <cmath>
#include <numeric>

namespace spatext::nn {

Param::Param(std::vector<int> dims) : shape(std::move(dims)) {
    const std::size_t n =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, [](std::size_t a, int d) { return a * d; });
    value.assign(n, 0.0f);
    grad.assign(n, 0.0f);
}

void he_normal(std::span<float> values, int fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (float& v : values) v = static_cast<float>(dist(rng));
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : weight({out_channels, in_channels, kernel, kernel}),
      bias({out_channels}),
      shape_{in_channels, out_channels, kernel, stride, pad} {}

void Conv2d::init(std::mt19937_64& rng, float gain) {
    he_normal(weight.value, shape_.in_channels * shape_.kernel * shape_.kernel, rng);
    for (float& v : weight.value) v *= gain;
    std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

Tensor Conv2d::forward(const Tensor& x) const {
    Tensor y;
    kernels::conv2d_forward(x, weight.value, bias.value, shape_, y);
    return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy, bool need_dx) {
    Tensor dx;
    kernels::conv2d_backward(x, weight.value, dy, shape_, need_dx ? &dx : nullptr, weight.grad, bias.grad);
    return dx;
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
}

Linear::Linear(int in_features, int out_features)
    : weight({out_features, in_features}), bias({out_features}), in_(in_features), out_(out_features) {}

void Linear::init(std::mt19937_64& rng, float gain) {
    he_normal(weight.value, in_, rng);
    for (float& v : weight.value) v *= gain;
    std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

Tensor Linear::forward(const Tensor& x) const {
    if (static_cast<int>(x.sample_size()) != in_) {
        throw std::invalid_argument("linear: expected " + std::to_string(in_) + " features, got " +
                                    std::to_string(x.sample_size()));
    }
    Tensor y(x.n(), out_, 1, 1);
    for (int n = 0; n < x.n(); ++n) {
        const float* in = x.sample(n);
        float* out = y.sample(n);
        for (int o = 0; o < out_; ++o) {
            const float* w = weight.value.data() + static_cast<std::size_t>(o) * in_;
            float acc = bias.value[o];
            for (int i = 0; i < in_; ++i) acc += w[i] * in[i];
            out[o] = acc;
        }
    }
    return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy) {
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    for (int n = 0; n < x.n(); ++n) {
        const float* in = x.sample(n);
        const float* g = dy.sample(n);
        float* gx = dx.sample(n);
        for (int o = 0; o < out_; ++o) {
            float* gw = weight.grad.data() + static_cast<std::size_t>(o) * in_;
            const float* w = weight.value.data() + static_cast<std::size_t>(o) * in_;
            bias.grad[o] += g[o];
            for (int i = 0; i < in_; ++i) {
                gw[i] += g[o] * in[i];
                gx[i] += g[o] * w[i];
            }
        }
    }
    return dx;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
}

double Adam::step(const std::vector<NamedParam>& params) {
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.param->size(), 0.0f);
            v_.emplace_back(p.param->size(), 0.0f);
        }
    }
    if (m_.size() != params.size()) throw std::logic_error("adam: parameter set changed between steps");

    double sq = 0.0;
    for (const auto& p : params)
        for (float g : p.param->grad) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    const double clip_scale = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const float b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = *params[k].param;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const float g = static_cast<float>(p.grad[i] * clip_scale);
            m[i] = b1 * m[i] + (1.0f - b1) * g;
            v[i] = b2 * v[i] + (1.0f - b2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= static_cast<float>(config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon));
        }
    }
    return norm;
}

std::vector<NamedParam> collect(const std::function<void(const ParamVisitor&)>& visit_all) {
    std::vector<NamedParam> out;
    visit_all([&](const std::string& name, Param& p) { out.push_back({name, &p}); });
    return out;
}

}  // namespace spatext::nn
