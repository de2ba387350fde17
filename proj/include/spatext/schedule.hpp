#pragma once

#include <string>
#include <vector>

#include "spatext/tensor.hpp"

namespace spatext {

enum class ScheduleKind { Linear, Cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

// Discrete-time DDPM noise schedule. Steps are 1-based: t in [1, T].
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::Linear;
    int steps = 0;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::vector<double> betas;       // betas[t-1]
    std::vector<double> alpha_bars;  // prod_{s<=t} (1 - beta_s)

    double beta(int t) const { return betas.at(t - 1); }
    double alpha_bar(int t) const { return alpha_bars.at(t - 1); }
    // alpha_bar(0) == 1.
    double alpha_bar_prev(int t) const { return t <= 1 ? 1.0 : alpha_bars.at(t - 2); }
    // Variance of q(x_{t-1} | x_t, x_0).
    double posterior_variance(int t) const;
    // log of posterior_variance with the t == 1 entry replaced by t == 2's (zero otherwise).
    double posterior_log_variance_clipped(int t) const;
    double posterior_mean_coef_x0(int t) const;
    double posterior_mean_coef_xt(int t) const;
};

// beta_start / beta_end are the linear-schedule endpoints (ignored for cosine).
NoiseSchedule make_schedule(int steps, ScheduleKind kind, double beta_start = 1e-4, double beta_end = 0.02);

// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps, with per-sample steps.
Tensor q_sample(const Tensor& x0, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& schedule);
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);

}  // namespace spatext
