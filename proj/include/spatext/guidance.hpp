#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spatext/tensor.hpp"

namespace spatext {

// The two conditions of the model. std::nullopt is the null condition:
// for the global text it selects the model's learned null embedding, for the
// spatial map it is the all-zero map (the same thing an empty scene produces).
struct ConditionSet {
    std::optional<std::vector<float>> global_text;
    std::optional<Tensor> spatial;  // [1, C, H, W]
};

enum class GuidanceMode { Multi, Fast };

// Multi: one scale per condition, in order {global, scene}. Fast: a single joint scale.
struct GuidanceSpec {
    GuidanceMode mode = GuidanceMode::Fast;
    std::vector<double> scales = {3.0};

    static GuidanceSpec fast(double scale);
    static GuidanceSpec multi(double global_scale, double scene_scale);

    void validate(int n_conditions) const;
};

std::string to_string(GuidanceMode mode);

// eps_u + s * (eps_c - eps_u)
Tensor cfg_single(const Tensor& eps_uncond, const Tensor& eps_cond, double scale);

// eps_u + sum_i s_i * (eps_i - eps_u)
Tensor cfg_multi(const Tensor& eps_uncond, std::span<const Tensor> eps_conds, std::span<const double> scales);

// eps_u + s * (eps_joint - eps_u)
Tensor cfg_fast(const Tensor& eps_uncond, const Tensor& eps_joint, double scale);

// Denoiser evaluations per sampling step: N + 1 for Multi, 2 for Fast.
int required_forward_passes(const GuidanceSpec& spec, int n_conditions);

struct DropoutDraw {
    bool drop_text = false;
    bool drop_spatial = false;
};

// Two independent Bernoulli(p) draws, text first.
DropoutDraw draw_dropout(double p, std::mt19937_64& rng);

// Independently replaces each condition by its null with probability p.
ConditionSet dropout_conditions(ConditionSet conds, double p, std::mt19937_64& rng);

}  // namespace spatext
