#include "spatext/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace spatext {
namespace {

// Which conditions a denoiser pass sees.
struct Pass {
    bool text = false;
    bool spatial = false;
};

void check_conditions(const InferenceModel& model, const Tensor& x_t, const std::vector<ConditionSet>& conds) {
    if (static_cast<int>(conds.size()) != x_t.n()) {
        throw ValidationError("sampler: one condition set per sample required");
    }
    for (const ConditionSet& c : conds) {
        if (c.global_text && static_cast<int>(c.global_text->size()) != model.text_dim()) {
            throw ValidationError("sampler: text embedding has dimension " + std::to_string(c.global_text->size()) +
                                  ", model expects " + std::to_string(model.text_dim()));
        }
        if (!c.spatial) continue;
        if (model.cond_channels() == 0) throw ValidationError("sampler: model takes no spatial condition");
        const Tensor& s = *c.spatial;
        if (s.n() != 1 || s.c() != model.cond_channels() || s.h() != x_t.h() || s.w() != x_t.w()) {
            throw ValidationError("sampler: spatial condition " + s.shape_string() + " does not match model input " +
                                  std::to_string(model.cond_channels()) + "x" + std::to_string(x_t.h()) + "x" +
                                  std::to_string(x_t.w()));
        }
    }
}

}  // namespace

Tensor guided_eps(const InferenceModel& model, const Tensor& x_t, const std::vector<ConditionSet>& conds,
                  const GuidanceSpec& guidance, int t) {
    check_conditions(model, x_t, conds);
    constexpr int kConditions = 2;
    guidance.validate(kConditions);

    std::vector<Pass> passes = {{false, false}};
    std::vector<double> scales;
    if (guidance.mode == GuidanceMode::Fast) {
        passes.push_back({true, true});
        scales.push_back(guidance.scales[0]);
    } else {
        if (guidance.scales[0] != 0.0) {
            passes.push_back({true, false});
            scales.push_back(guidance.scales[0]);
        }
        if (guidance.scales[1] != 0.0) {
            passes.push_back({false, true});
            scales.push_back(guidance.scales[1]);
        }
    }

    const int n = x_t.n();
    const int p_count = static_cast<int>(passes.size());
    const int total = n * p_count;
    DenoiserInput in;
    in.x_t = Tensor(total, x_t.c(), x_t.h(), x_t.w());
    in.text = Tensor(total, model.text_dim(), 1, 1);
    in.text_null.assign(total, 1);
    in.t.assign(total, t);
    if (model.cond_channels() > 0) in.cond_map = Tensor(total, model.cond_channels(), x_t.h(), x_t.w());
    for (int p = 0; p < p_count; ++p)
        for (int i = 0; i < n; ++i) {
            const int row = p * n + i;
            std::copy_n(x_t.sample(i), x_t.sample_size(), in.x_t.sample(row));
            const ConditionSet& c = conds[i];
            if (passes[p].text && c.global_text) {
                std::copy(c.global_text->begin(), c.global_text->end(), in.text.sample(row));
                in.text_null[row] = 0;
            }
            if (passes[p].spatial && c.spatial) {
                std::copy_n(c.spatial->data(), c.spatial->size(), in.cond_map.sample(row));
            }
        }
    const Tensor eps_all = model.infer(in).eps;

    auto pass_slice = [&](int p) {
        Tensor out(n, x_t.c(), x_t.h(), x_t.w());
        std::copy_n(eps_all.sample(p * n), out.size(), out.data());
        return out;
    };
    const Tensor uncond = pass_slice(0);
    if (p_count == 1) return uncond;
    if (guidance.mode == GuidanceMode::Fast) return cfg_fast(uncond, pass_slice(1), scales[0]);
    std::vector<Tensor> conds_eps;
    for (int p = 1; p < p_count; ++p) conds_eps.push_back(pass_slice(p));
    return cfg_multi(uncond, conds_eps, scales);
}

std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) {
        throw ValidationError("ddim: steps must be in [1, " + std::to_string(T) + "], got " + std::to_string(steps));
    }
    std::vector<int> seq(steps);
    for (int i = 0; i < steps; ++i) seq[i] = 1 + static_cast<int>(static_cast<long long>(i) * T / steps);
    return seq;
}

Tensor seeded_noise(int channels, int height, int width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    Tensor out(1, channels, height, width);
    for (float& v : out.values()) v = normal(rng);
    return out;
}

Tensor ddim_sample(const InferenceModel& model, const NoiseSchedule& schedule, const std::vector<ConditionSet>& conds,
                   const GuidanceSpec& guidance, const std::vector<std::uint64_t>& seeds, int height, int width,
                   const DdimOptions& options) {
    if (seeds.size() != conds.size()) throw ValidationError("ddim: one seed per condition set required");
    const std::vector<int> seq = ddim_timesteps(schedule.steps, options.steps);
    const int n = static_cast<int>(seeds.size());
    const int c = model.space_channels();
    Tensor x(n, c, height, width);
    for (int i = 0; i < n; ++i) assign_sample(x, i, seeded_noise(c, height, width, seeds[i]));

    for (int k = static_cast<int>(seq.size()) - 1; k >= 0; --k) {
        const int t = seq[k];
        const Tensor eps = guided_eps(model, x, conds, guidance, t);
        const double ab = schedule.alpha_bar(t);
        const double ab_prev = k > 0 ? schedule.alpha_bar(seq[k - 1]) : 1.0;
        const double sqrt_ab = std::sqrt(ab), sqrt_1mab = std::sqrt(1.0 - ab);
        const double sqrt_ab_prev = std::sqrt(ab_prev), sqrt_1mab_prev = std::sqrt(1.0 - ab_prev);
        float* xv = x.data();
        const float* ev = eps.data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            double x0 = (xv[i] - sqrt_1mab * ev[i]) / sqrt_ab;
            double e = ev[i];
            if (options.clip_x0) {
                x0 = std::clamp(x0, -1.0, 1.0);
                e = (xv[i] - sqrt_ab * x0) / sqrt_1mab;
            }
            xv[i] = static_cast<float>(sqrt_ab_prev * x0 + sqrt_1mab_prev * e);
        }
        if (options.progress) options.progress(static_cast<int>(seq.size()) - k, static_cast<int>(seq.size()));
    }
    return x;
}

}  // namespace spatext
