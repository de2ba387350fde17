#pragma once

// Compute kernels behind the neural network layers.
//
// Every kernel has two implementations with identical signatures:
//   spatext::kernels::            OpenMP-parallel, im2col + GEMM for convolutions
//   spatext::kernels::reference:: plain serial loops, kept as the test oracle
//
// Weight gradients are reduced in sample order, so the parallel kernels give
// the same bits regardless of the thread count.

#include <span>

#include "spatext/tensor.hpp"

namespace spatext::kernels {

struct ConvShape {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
    std::size_t weight_size() const {
        return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
    }
};

// y[n, o] = b[o] + sum_{c, ky, kx} w[o, c, ky, kx] * x[n, c, oy*s + ky - p, ox*s + kx - p]
void conv2d_forward(const Tensor& x, std::span<const float> weight, std::span<const float> bias,
                    const ConvShape& shape, Tensor& y);

// Accumulates into d_weight / d_bias. `dx` may be null when the input gradient is not needed.
void conv2d_backward(const Tensor& x, std::span<const float> weight, const Tensor& dy, const ConvShape& shape,
                     Tensor* dx, std::span<float> d_weight, std::span<float> d_bias);

void silu_forward(const Tensor& x, Tensor& y);
// dx = dy * silu'(x)
void silu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

void upsample2x_forward(const Tensor& x, Tensor& y);
void upsample2x_backward(const Tensor& dy, Tensor& dx);

namespace reference {

void conv2d_forward(const Tensor& x, std::span<const float> weight, std::span<const float> bias,
                    const ConvShape& shape, Tensor& y);
void conv2d_backward(const Tensor& x, std::span<const float> weight, const Tensor& dy, const ConvShape& shape,
                     Tensor* dx, std::span<float> d_weight, std::span<float> d_bias);
void silu_forward(const Tensor& x, Tensor& y);
void silu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);
void upsample2x_forward(const Tensor& x, Tensor& y);
void upsample2x_backward(const Tensor& dy, Tensor& dx);

}  // namespace reference

}  // namespace spatext::kernels
