#include "spatext/guidance.hpp"

#include <cmath>

namespace spatext {

GuidanceSpec GuidanceSpec::fast(double scale) { return {GuidanceMode::Fast, {scale}}; }

GuidanceSpec GuidanceSpec::multi(double global_scale, double scene_scale) {
    return {GuidanceMode::Multi, {global_scale, scene_scale}};
}

void GuidanceSpec::validate(int n_conditions) const {
    for (double s : scales) {
        if (!std::isfinite(s) || s < 0.0) throw ValidationError("guidance scales must be finite and non-negative");
    }
    if (mode == GuidanceMode::Fast && scales.size() != 1) {
        throw ValidationError("fast guidance takes exactly one scale");
    }
    if (mode == GuidanceMode::Multi && static_cast<int>(scales.size()) != n_conditions) {
        throw ValidationError("multi guidance needs one scale per condition (" + std::to_string(n_conditions) +
                              "), got " + std::to_string(scales.size()));
    }
}

std::string to_string(GuidanceMode mode) { return mode == GuidanceMode::Multi ? "multi" : "fast"; }

Tensor cfg_single(const Tensor& eps_uncond, const Tensor& eps_cond, double scale) {
    require_same_shape(eps_uncond, eps_cond, "cfg_single");
    Tensor out(eps_uncond.n(), eps_uncond.c(), eps_uncond.h(), eps_uncond.w());
    const float* u = eps_uncond.data();
    const float* c = eps_cond.data();
    float* o = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double delta = scale * (static_cast<double>(c[i]) - u[i]);
        o[i] = static_cast<float>(u[i] + delta);
    }
    return out;
}

Tensor cfg_multi(const Tensor& eps_uncond, std::span<const Tensor> eps_conds, std::span<const double> scales) {
    if (eps_conds.empty()) throw std::invalid_argument("cfg_multi: at least one condition required");
    if (eps_conds.size() != scales.size()) throw std::invalid_argument("cfg_multi: one scale per condition");
    for (const Tensor& e : eps_conds) require_same_shape(eps_uncond, e, "cfg_multi");
    Tensor out(eps_uncond.n(), eps_uncond.c(), eps_uncond.h(), eps_uncond.w());
    const float* u = eps_uncond.data();
    float* o = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double delta = 0.0;
        for (std::size_t k = 0; k < eps_conds.size(); ++k) {
            delta += scales[k] * (static_cast<double>(eps_conds[k].data()[i]) - u[i]);
        }
        o[i] = static_cast<float>(u[i] + delta);
    }
    return out;
}

Tensor cfg_fast(const Tensor& eps_uncond, const Tensor& eps_joint, double scale) {
    require_same_shape(eps_uncond, eps_joint, "cfg_fast");
    return cfg_single(eps_uncond, eps_joint, scale);
}

int required_forward_passes(const GuidanceSpec& spec, int n_conditions) {
    if (n_conditions < 1) throw std::invalid_argument("required_forward_passes: need at least one condition");
    return spec.mode == GuidanceMode::Multi ? n_conditions + 1 : 2;
}

DropoutDraw draw_dropout(double p, std::mt19937_64& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("dropout probability must lie in [0, 1]");
    std::bernoulli_distribution coin(p);
    DropoutDraw d;
    d.drop_text = coin(rng);
    d.drop_spatial = coin(rng);
    return d;
}

ConditionSet dropout_conditions(ConditionSet conds, double p, std::mt19937_64& rng) {
    const DropoutDraw d = draw_dropout(p, rng);
    if (d.drop_text) conds.global_text.reset();
    if (d.drop_spatial) conds.spatial.reset();
    return conds;
}

}  // namespace spatext
