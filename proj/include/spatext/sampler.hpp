#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "spatext/denoiser.hpp"
#include "spatext/guidance.hpp"
#include "spatext/schedule.hpp"

namespace spatext {

// Guided noise estimate for a batch at one step. conds[i] belongs to sample i
// of x_t. Fast: {uncond, joint}. Multi: uncond plus one pass per condition
// with every other condition nulled; passes whose scale is zero are skipped.
Tensor guided_eps(const InferenceModel& model, const Tensor& x_t, const std::vector<ConditionSet>& conds,
                  const GuidanceSpec& guidance, int t);

// Sampling timesteps, ascending, 1-based: 1 + floor(i * T / steps).
std::vector<int> ddim_timesteps(int T, int steps);

// Standard normal noise for one sample, fully determined by the seed.
Tensor seeded_noise(int channels, int height, int width, std::uint64_t seed);

struct DdimOptions {
    int steps = 50;
    bool clip_x0 = true;  // clamp predicted x0 to [-1, 1] (pixel space)
    // Called after every step with (done, total).
    std::function<void(int, int)> progress;
};

// Deterministic (eta = 0) DDIM. Returns x0 as [N, C, H, W]; sample i starts
// from seeded_noise(seeds[i]).
Tensor ddim_sample(const InferenceModel& model, const NoiseSchedule& schedule, const std::vector<ConditionSet>& conds,
                   const GuidanceSpec& guidance, const std::vector<std::uint64_t>& seeds, int height, int width,
                   const DdimOptions& options);

}  // namespace spatext
