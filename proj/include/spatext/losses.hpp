#pragma once

#include <cstdint>
#include <vector>

#include "spatext/codec.hpp"
#include "spatext/denoiser.hpp"
#include "spatext/schedule.hpp"

namespace spatext {

// One training minibatch with every random choice already made
// (steps, noise, dropped conditions), so a loss is a pure function of it.
struct TrainingBatch {
    Tensor x0;        // [N, C, H, W]: pixels in [-1, 1], or raw images for the latent loss
    Tensor cond_map;  // spatial condition at model resolution (zeros where dropped)
    Tensor text;      // [N, d, 1, 1]
    std::vector<std::uint8_t> text_null;
    std::vector<int> t;
    Tensor eps;       // same shape as the diffused variable
};

struct LossTerms {
    double simple = 0.0;
    double vlb = 0.0;
    double total = 0.0;
};

// Mean squared error; writes d(mse)/d(pred) into grad when given.
double mse(const Tensor& target, const Tensor& pred, Tensor* grad);

// Mean per-dimension variational bound term in bits: KL(q(x_{t-1}|x_t,x_0) || p(x_{t-1}|x_t))
// for t > 1, discretized-Gaussian decoder NLL for t == 1. The model mean is
// treated as a constant; only the variance output receives gradient.
// var_interp may be null (fixed variance beta_t).
double vlb_term(const Tensor& x0, const Tensor& x_t, const std::vector<int>& t, const Tensor& eps_pred,
                const Tensor* var_interp, const NoiseSchedule& schedule, Tensor* d_var);

// || eps - eps_theta(x_t, text, cond, t) ||^2, averaged. Backpropagates when asked.
double loss_simple(NoisePredictor& model, const TrainingBatch& batch, const NoiseSchedule& schedule,
                   bool backprop = false);

double loss_vlb(NoisePredictor& model, const TrainingBatch& batch, const NoiseSchedule& schedule);

// simple + lambda * vlb from a single forward pass.
LossTerms loss_hybrid(NoisePredictor& model, const TrainingBatch& batch, const NoiseSchedule& schedule,
                      double lambda, bool backprop = false);

// Simple loss in the latent space of a frozen codec: z0 = Enc(x0). The
// codec never receives gradient. batch.cond_map must already be at latent
// resolution and batch.eps latent-shaped.
double loss_latent(NoisePredictor& model, const Codec& codec, const TrainingBatch& batch,
                   const NoiseSchedule& schedule, bool backprop = false);

}  // namespace spatext
