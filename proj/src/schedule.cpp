#include "spatext/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace spatext {

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "linear") return ScheduleKind::Linear;
    if (name == "cosine") return ScheduleKind::Cosine;
    throw ValidationError("unknown noise schedule '" + name + "' (expected linear or cosine)");
}

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::Linear ? "linear" : "cosine"; }

NoiseSchedule make_schedule(int steps, ScheduleKind kind, double beta_start, double beta_end) {
    if (steps < 2) throw ValidationError("noise schedule needs at least 2 steps, got " + std::to_string(steps));
    NoiseSchedule s;
    s.kind = kind;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.resize(steps);
    if (kind == ScheduleKind::Linear) {
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
            throw ValidationError("linear schedule needs 0 < beta_start <= beta_end < 1");
        }
        for (int i = 0; i < steps; ++i) {
            s.betas[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
        }
    } else {
        constexpr double offset = 0.008;
        auto f = [&](double t) {
            const double v = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
            return v * v;
        };
        for (int i = 0; i < steps; ++i) {
            s.betas[i] = std::min(1.0 - f(i + 1.0) / f(static_cast<double>(i)), 0.999);
        }
    }
    s.alpha_bars.resize(steps);
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        prod *= 1.0 - s.betas[i];
        s.alpha_bars[i] = prod;
    }
    return s;
}

double NoiseSchedule::posterior_variance(int t) const {
    return beta(t) * (1.0 - alpha_bar_prev(t)) / (1.0 - alpha_bar(t));
}

double NoiseSchedule::posterior_log_variance_clipped(int t) const {
    return std::log(posterior_variance(t <= 1 ? 2 : t));
}

double NoiseSchedule::posterior_mean_coef_x0(int t) const {
    return beta(t) * std::sqrt(alpha_bar_prev(t)) / (1.0 - alpha_bar(t));
}

double NoiseSchedule::posterior_mean_coef_xt(int t) const {
    return (1.0 - alpha_bar_prev(t)) * std::sqrt(1.0 - beta(t)) / (1.0 - alpha_bar(t));
}

Tensor q_sample(const Tensor& x0, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "q_sample");
    if (static_cast<int>(t.size()) != x0.n()) throw std::invalid_argument("q_sample: one step per sample required");
    Tensor out(x0.n(), x0.c(), x0.h(), x0.w());
    for (int n = 0; n < x0.n(); ++n) {
        if (t[n] < 1 || t[n] > schedule.steps) {
            throw std::out_of_range("q_sample: step " + std::to_string(t[n]) + " outside [1, " +
                                    std::to_string(schedule.steps) + "]");
        }
        const double ab = schedule.alpha_bar(t[n]);
        const float a = static_cast<float>(std::sqrt(ab));
        const float b = static_cast<float>(std::sqrt(1.0 - ab));
        const float* x = x0.sample(n);
        const float* e = eps.sample(n);
        float* o = out.sample(n);
        for (std::size_t i = 0; i < x0.sample_size(); ++i) o[i] = a * x[i] + b * e[i];
    }
    return out;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
    return q_sample(x0, std::vector<int>(x0.n(), t), eps, schedule);
}

}  // namespace spatext
