#include "spatext/losses.hpp"

#include <cmath>
#include <numbers>

namespace spatext {
namespace {

constexpr double kLn2 = std::numbers::ln2;
constexpr double kProbFloor = 1e-12;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

struct TermAndSlope {
    double value;  // nats
    double slope;  // d value / d logvar_p
};

TermAndSlope gaussian_kl(double mean_q, double logvar_q, double mean_p, double logvar_p) {
    const double diff2 = (mean_q - mean_p) * (mean_q - mean_p);
    const double ratio = std::exp(logvar_q - logvar_p);
    const double inv_p = std::exp(-logvar_p);
    return {0.5 * (-1.0 + logvar_p - logvar_q + ratio + diff2 * inv_p), 0.5 * (1.0 - ratio - diff2 * inv_p)};
}

// -log P(x) for a Gaussian discretized to 256 bins over [-1, 1].
TermAndSlope discretized_nll(double x, double mean, double logvar) {
    const double inv_std = std::exp(-0.5 * logvar);
    const double centered = x - mean;
    const double plus_in = inv_std * (centered + 1.0 / 255.0);
    const double min_in = inv_std * (centered - 1.0 / 255.0);
    // d(plus_in)/d(logvar) = -plus_in / 2, likewise for min_in.
    double prob = 0.0, dprob = 0.0;
    if (x < -0.999) {
        prob = normal_cdf(plus_in);
        dprob = normal_pdf(plus_in) * (-0.5 * plus_in);
    } else if (x > 0.999) {
        prob = 0.5 * std::erfc(min_in / std::numbers::sqrt2);
        dprob = -normal_pdf(min_in) * (-0.5 * min_in);
    } else {
        prob = normal_cdf(plus_in) - normal_cdf(min_in);
        dprob = normal_pdf(plus_in) * (-0.5 * plus_in) - normal_pdf(min_in) * (-0.5 * min_in);
    }
    if (prob < kProbFloor) return {-std::log(kProbFloor), 0.0};
    return {-std::log(prob), -dprob / prob};
}

void check_batch(const TrainingBatch& b) {
    if (b.x0.n() != static_cast<int>(b.t.size()) || b.x0.n() != static_cast<int>(b.text_null.size())) {
        throw std::invalid_argument("training batch: per-sample metadata size mismatch");
    }
}

DenoiserInput make_input(const TrainingBatch& b, Tensor x_t) {
    DenoiserInput in;
    in.x_t = std::move(x_t);
    in.cond_map = b.cond_map;
    in.text = b.text;
    in.text_null = b.text_null;
    in.t = b.t;
    return in;
}

}  // namespace

double mse(const Tensor& target, const Tensor& pred, Tensor* grad) {
    require_same_shape(target, pred, "mse");
    if (grad != nullptr && !grad->same_shape(pred)) *grad = Tensor(pred.n(), pred.c(), pred.h(), pred.w());
    const double inv = 1.0 / static_cast<double>(pred.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data()[i]) - target.data()[i];
        sq += d * d;
        if (grad != nullptr) grad->data()[i] = static_cast<float>(2.0 * d * inv);
    }
    return sq * inv;
}

double vlb_term(const Tensor& x0, const Tensor& x_t, const std::vector<int>& t, const Tensor& eps_pred,
                const Tensor* var_interp, const NoiseSchedule& schedule, Tensor* d_var) {
    require_same_shape(x0, x_t, "vlb_term");
    require_same_shape(x0, eps_pred, "vlb_term");
    const bool learned = var_interp != nullptr && !var_interp->empty();
    if (learned) require_same_shape(x0, *var_interp, "vlb_term");
    if (d_var != nullptr) *d_var = learned ? Tensor(x0.n(), x0.c(), x0.h(), x0.w()) : Tensor();

    const double inv_count = 1.0 / static_cast<double>(x0.size());
    double total = 0.0;
    for (int n = 0; n < x0.n(); ++n) {
        const int step = t[n];
        const double ab = schedule.alpha_bar(step);
        const double sqrt_ab = std::sqrt(ab), sqrt_1mab = std::sqrt(1.0 - ab);
        const double c0 = schedule.posterior_mean_coef_x0(step);
        const double ct = schedule.posterior_mean_coef_xt(step);
        const double min_log = schedule.posterior_log_variance_clipped(step);
        const double max_log = std::log(schedule.beta(step));
        const double logvar_q = min_log;
        for (std::size_t i = 0; i < x0.sample_size(); ++i) {
            const double x = x0.sample(n)[i];
            const double xt = x_t.sample(n)[i];
            const double x0_pred = (xt - sqrt_1mab * eps_pred.sample(n)[i]) / sqrt_ab;
            const double mean_q = c0 * x + ct * xt;
            const double mean_p = c0 * x0_pred + ct * xt;
            const double frac = learned ? (var_interp->sample(n)[i] + 1.0) * 0.5 : 1.0;
            const double logvar_p = frac * max_log + (1.0 - frac) * min_log;
            const TermAndSlope term =
                step == 1 ? discretized_nll(x, mean_p, logvar_p) : gaussian_kl(mean_q, logvar_q, mean_p, logvar_p);
            total += term.value / kLn2;
            if (d_var != nullptr && learned) {
                d_var->sample(n)[i] =
                    static_cast<float>(term.slope / kLn2 * 0.5 * (max_log - min_log) * inv_count);
            }
        }
    }
    return total * inv_count;
}

double loss_simple(NoisePredictor& model, const TrainingBatch& batch, const NoiseSchedule& schedule,
                   bool backprop) {
    check_batch(batch);
    const Tensor x_t = q_sample(batch.x0, batch.t, batch.eps, schedule);
    const Prediction pred = model.predict(make_input(batch, x_t));
    Tensor grad;
    const double value = mse(batch.eps, pred.eps, backprop ? &grad : nullptr);
    if (backprop) model.backward(grad, nullptr);
    return value;
}

double loss_vlb(NoisePredictor& model, const TrainingBatch& batch, const NoiseSchedule& schedule) {
    check_batch(batch);
    const Tensor x_t = q_sample(batch.x0, batch.t, batch.eps, schedule);
    const Prediction pred = model.predict(make_input(batch, x_t));
    return vlb_term(batch.x0, x_t, batch.t, pred.eps, pred.var_interp.empty() ? nullptr : &pred.var_interp,
                    schedule, nullptr);
}

LossTerms loss_hybrid(NoisePredictor& model, const TrainingBatch& batch, const NoiseSchedule& schedule,
                      double lambda, bool backprop) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("loss_hybrid: lambda must be non-negative");
    check_batch(batch);
    const Tensor x_t = q_sample(batch.x0, batch.t, batch.eps, schedule);
    const Prediction pred = model.predict(make_input(batch, x_t));
    Tensor d_eps, d_var;
    LossTerms terms;
    terms.simple = mse(batch.eps, pred.eps, backprop ? &d_eps : nullptr);
    terms.vlb = vlb_term(batch.x0, x_t, batch.t, pred.eps, pred.var_interp.empty() ? nullptr : &pred.var_interp,
                         schedule, backprop ? &d_var : nullptr);
    terms.total = terms.simple + lambda * terms.vlb;
    if (backprop) {
        for (float& v : d_var.values()) v = static_cast<float>(v * lambda);
        model.backward(d_eps, d_var.empty() ? nullptr : &d_var);
    }
    return terms;
}

double loss_latent(NoisePredictor& model, const Codec& codec, const TrainingBatch& batch,
                   const NoiseSchedule& schedule, bool backprop) {
    check_batch(batch);
    const Tensor z0 = codec.encode(batch.x0);
    if (!batch.cond_map.empty() && (batch.cond_map.h() != z0.h() || batch.cond_map.w() != z0.w())) {
        throw ValidationError("loss_latent: spatial condition is " + std::to_string(batch.cond_map.h()) + "x" +
                              std::to_string(batch.cond_map.w()) + " but the latent is " + std::to_string(z0.h()) +
                              "x" + std::to_string(z0.w()));
    }
    TrainingBatch latent = batch;
    latent.x0 = z0;
    return loss_simple(model, latent, schedule, backprop);
}

}  // namespace spatext
