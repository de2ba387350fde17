#include "spatext/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

namespace spatext::kernels {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void check_conv_input(const Tensor& x, std::span<const float> weight, const ConvShape& s) {
    if (x.c() != s.in_channels) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(x.c()) + " channels, layer expects " +
                                    std::to_string(s.in_channels));
    }
    if (weight.size() != s.weight_size()) {
        throw std::invalid_argument("conv2d: weight size mismatch");
    }
}

// cols[(c*k + ky)*k + kx, oy*ow + ox]
void im2col(const float* x, int channels, int h, int w, const ConvShape& s, int oh, int ow, float* cols) {
    const int k = s.kernel;
    const std::size_t p = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < channels; ++c) {
        const float* plane = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * p;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s.stride + ky - s.pad;
                    float* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(dst, ow, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * s.stride + kx - s.pad;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* cols, int channels, int h, int w, const ConvShape& s, int oh, int ow, float* x) {
    const int k = s.kernel;
    const std::size_t p = static_cast<std::size_t>(oh) * ow;
    std::fill_n(x, static_cast<std::size_t>(channels) * h * w, 0.0f);
    for (int c = 0; c < channels; ++c) {
        float* plane = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * p;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s.stride + ky - s.pad;
                    if (iy < 0 || iy >= h) continue;
                    const float* src = row + static_cast<std::size_t>(oy) * ow;
                    float* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * s.stride + kx - s.pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// The clamp keeps exp finite: this file is built with -ffast-math, which
// assumes no infinities.
float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-std::max(v, -80.0f))); }

}  // namespace

void conv2d_forward(const Tensor& x, std::span<const float> weight, std::span<const float> bias,
                    const ConvShape& s, Tensor& y) {
    check_conv_input(x, weight, s);
    const int oh = s.out_size(x.h());
    const int ow = s.out_size(x.w());
    if (!(y.n() == x.n() && y.c() == s.out_channels && y.h() == oh && y.w() == ow)) {
        y = Tensor(x.n(), s.out_channels, oh, ow);
    }
    const int kk = s.in_channels * s.kernel * s.kernel;
    const int p = oh * ow;
    ConstMatrixMap wmat(weight.data(), s.out_channels, kk);

#pragma omp parallel
    {
        std::vector<float> cols(static_cast<std::size_t>(kk) * p);
#pragma omp for schedule(static)
        for (int n = 0; n < x.n(); ++n) {
            im2col(x.sample(n), x.c(), x.h(), x.w(), s, oh, ow, cols.data());
            MatrixMap out(y.sample(n), s.out_channels, p);
            out.noalias() = wmat * ConstMatrixMap(cols.data(), kk, p);
            if (!bias.empty()) {
                for (int o = 0; o < s.out_channels; ++o) out.row(o).array() += bias[o];
            }
        }
    }
}

void conv2d_backward(const Tensor& x, std::span<const float> weight, const Tensor& dy, const ConvShape& s,
                     Tensor* dx, std::span<float> d_weight, std::span<float> d_bias) {
    check_conv_input(x, weight, s);
    const int oh = s.out_size(x.h());
    const int ow = s.out_size(x.w());
    if (!(dy.n() == x.n() && dy.c() == s.out_channels && dy.h() == oh && dy.w() == ow)) {
        throw std::invalid_argument("conv2d_backward: gradient shape mismatch");
    }
    if (d_weight.size() != s.weight_size()) throw std::invalid_argument("conv2d_backward: d_weight size");
    if (dx != nullptr && !dx->same_shape(x)) *dx = Tensor(x.n(), x.c(), x.h(), x.w());

    const int kk = s.in_channels * s.kernel * s.kernel;
    const int p = oh * ow;
    const std::size_t wsize = s.weight_size();
    ConstMatrixMap wmat(weight.data(), s.out_channels, kk);
    std::vector<float> per_sample(wsize * static_cast<std::size_t>(x.n()));

#pragma omp parallel
    {
        std::vector<float> cols(static_cast<std::size_t>(kk) * p);
#pragma omp for schedule(static)
        for (int n = 0; n < x.n(); ++n) {
            ConstMatrixMap g(dy.sample(n), s.out_channels, p);
            im2col(x.sample(n), x.c(), x.h(), x.w(), s, oh, ow, cols.data());
            MatrixMap dw(per_sample.data() + wsize * n, s.out_channels, kk);
            dw.noalias() = g * ConstMatrixMap(cols.data(), kk, p).transpose();
            if (dx != nullptr) {
                MatrixMap dcols(cols.data(), kk, p);
                dcols.noalias() = wmat.transpose() * g;
                col2im(cols.data(), x.c(), x.h(), x.w(), s, oh, ow, dx->sample(n));
            }
        }
    }

    for (int n = 0; n < x.n(); ++n) {
        const float* src = per_sample.data() + wsize * n;
        for (std::size_t i = 0; i < wsize; ++i) d_weight[i] += src[i];
    }
    if (!d_bias.empty()) {
        for (int n = 0; n < x.n(); ++n) {
            for (int o = 0; o < s.out_channels; ++o) {
                const float* g = dy.sample(n) + static_cast<std::size_t>(o) * p;
                double acc = 0.0;
                for (int i = 0; i < p; ++i) acc += g[i];
                d_bias[o] += static_cast<float>(acc);
            }
        }
    }
}

void silu_forward(const Tensor& x, Tensor& y) {
    if (!y.same_shape(x)) y = Tensor(x.n(), x.c(), x.h(), x.w());
    const float* in = x.data();
    float* out = y.data();
    const std::ptrdiff_t size = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for simd schedule(static)
    for (std::ptrdiff_t i = 0; i < size; ++i) out[i] = in[i] * sigmoid(in[i]);
}

void silu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    require_same_shape(x, dy, "silu_backward");
    if (!dx.same_shape(x)) dx = Tensor(x.n(), x.c(), x.h(), x.w());
    const float* in = x.data();
    const float* g = dy.data();
    float* out = dx.data();
    const std::ptrdiff_t size = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for simd schedule(static)
    for (std::ptrdiff_t i = 0; i < size; ++i) {
        const float sg = sigmoid(in[i]);
        out[i] = g[i] * (sg + in[i] * sg * (1.0f - sg));
    }
}

void upsample2x_forward(const Tensor& x, Tensor& y) {
    if (!(y.n() == x.n() && y.c() == x.c() && y.h() == 2 * x.h() && y.w() == 2 * x.w())) {
        y = Tensor(x.n(), x.c(), 2 * x.h(), 2 * x.w());
    }
    const int planes = x.n() * x.c();
    const int h = x.h(), w = x.w();
#pragma omp parallel for schedule(static)
    for (int pl = 0; pl < planes; ++pl) {
        const float* src = x.data() + static_cast<std::size_t>(pl) * h * w;
        float* dst = y.data() + static_cast<std::size_t>(pl) * 4 * h * w;
        for (int yy = 0; yy < 2 * h; ++yy) {
            for (int xx = 0; xx < 2 * w; ++xx) dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
        }
    }
}

void upsample2x_backward(const Tensor& dy, Tensor& dx) {
    const int h = dy.h() / 2, w = dy.w() / 2;
    if (!(dx.n() == dy.n() && dx.c() == dy.c() && dx.h() == h && dx.w() == w)) dx = Tensor(dy.n(), dy.c(), h, w);
    const int planes = dy.n() * dy.c();
#pragma omp parallel for schedule(static)
    for (int pl = 0; pl < planes; ++pl) {
        const float* src = dy.data() + static_cast<std::size_t>(pl) * 4 * h * w;
        float* dst = dx.data() + static_cast<std::size_t>(pl) * h * w;
        for (int yy = 0; yy < h; ++yy) {
            for (int xx = 0; xx < w; ++xx) {
                const float* a = src + (2 * yy) * 2 * w + 2 * xx;
                const float* b = a + 2 * w;
                dst[yy * w + xx] = a[0] + a[1] + b[0] + b[1];
            }
        }
    }
}

namespace reference {

void conv2d_forward(const Tensor& x, std::span<const float> weight, std::span<const float> bias,
                    const ConvShape& s, Tensor& y) {
    check_conv_input(x, weight, s);
    const int oh = s.out_size(x.h());
    const int ow = s.out_size(x.w());
    y = Tensor(x.n(), s.out_channels, oh, ow);
    const int k = s.kernel;
    for (int n = 0; n < x.n(); ++n) {
        for (int o = 0; o < s.out_channels; ++o) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[o];
                    for (int c = 0; c < s.in_channels; ++c) {
                        for (int ky = 0; ky < k; ++ky) {
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = oy * s.stride + ky - s.pad;
                                const int ix = ox * s.stride + kx - s.pad;
                                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                                acc += static_cast<double>(weight[((o * s.in_channels + c) * k + ky) * k + kx]) *
                                       x.at(n, c, iy, ix);
                            }
                        }
                    }
                    y.at(n, o, oy, ox) = static_cast<float>(acc);
                }
            }
        }
    }
}

void conv2d_backward(const Tensor& x, std::span<const float> weight, const Tensor& dy, const ConvShape& s,
                     Tensor* dx, std::span<float> d_weight, std::span<float> d_bias) {
    check_conv_input(x, weight, s);
    const int oh = s.out_size(x.h());
    const int ow = s.out_size(x.w());
    const int k = s.kernel;
    if (dx != nullptr) *dx = Tensor(x.n(), x.c(), x.h(), x.w());
    std::vector<double> dw(s.weight_size(), 0.0);
    for (int n = 0; n < x.n(); ++n) {
        for (int o = 0; o < s.out_channels; ++o) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const float g = dy.at(n, o, oy, ox);
                    if (!d_bias.empty()) d_bias[o] += g;
                    for (int c = 0; c < s.in_channels; ++c) {
                        for (int ky = 0; ky < k; ++ky) {
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = oy * s.stride + ky - s.pad;
                                const int ix = ox * s.stride + kx - s.pad;
                                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                                const std::size_t wi = ((o * s.in_channels + c) * k + ky) * k + kx;
                                dw[wi] += static_cast<double>(g) * x.at(n, c, iy, ix);
                                if (dx != nullptr) dx->at(n, c, iy, ix) += g * weight[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    for (std::size_t i = 0; i < dw.size(); ++i) d_weight[i] += static_cast<float>(dw[i]);
}

void silu_forward(const Tensor& x, Tensor& y) {
    y = Tensor(x.n(), x.c(), x.h(), x.w());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float v = x.data()[i];
        y.data()[i] = v / (1.0f + std::exp(-std::max(v, -80.0f)));
    }
}

void silu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    dx = Tensor(x.n(), x.c(), x.h(), x.w());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float v = x.data()[i];
        const float sg = 1.0f / (1.0f + std::exp(-std::max(v, -80.0f)));
        dx.data()[i] = dy.data()[i] * sg * (1.0f + v * (1.0f - sg));
    }
}

void upsample2x_forward(const Tensor& x, Tensor& y) {
    y = Tensor(x.n(), x.c(), 2 * x.h(), 2 * x.w());
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int yy = 0; yy < y.h(); ++yy)
                for (int xx = 0; xx < y.w(); ++xx) y.at(n, c, yy, xx) = x.at(n, c, yy / 2, xx / 2);
}

void upsample2x_backward(const Tensor& dy, Tensor& dx) {
    dx = Tensor(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
    for (int n = 0; n < dy.n(); ++n)
        for (int c = 0; c < dy.c(); ++c)
            for (int yy = 0; yy < dy.h(); ++yy)
                for (int xx = 0; xx < dy.w(); ++xx) dx.at(n, c, yy / 2, xx / 2) += dy.at(n, c, yy, xx);
}

}  // namespace reference

}  // namespace spatext::kernels
