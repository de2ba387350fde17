#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <json.hpp>

#include "spatext/checkpoint.hpp"
#include "spatext/guidance.hpp"
#include "spatext/image.hpp"
#include "spatext/scene.hpp"

namespace spatext {

struct GenerationOptions {
    GuidanceSpec guidance;     // FAST, s = 3
    int steps = 0;             // 0: the checkpoint's default (50 latent, 250 pixel)
    bool use_prior = true;     // ignored when the checkpoint has no prior
    bool concat_prompts = true;  // global text = global prompt + ", " + local prompts
    // Called after every sampling step of every chunk with (done, total) steps.
    std::function<void(int, int)> step_progress;
};

// Global text and spatial condition for one scene, at the model's resolution.
// An empty text becomes the null text condition. Throws ValidationError when
// the canvas does not match the checkpoint or a prompt is out of vocabulary.
ConditionSet prepare_conditions(const ModelBundle& bundle, const Embedder& embedder, const SceneSpec& scene,
                                const GenerationOptions& options);

using GenerationProgress = std::function<void(int done, int total)>;

// One image per scene; scene i starts from the noise of seeds[i]. Samples are
// batched in chunks of at most `batch`; results do not depend on the chunking.
std::vector<Image> generate_images(const ModelBundle& bundle, const std::vector<SceneSpec>& scenes,
                                   const std::vector<std::uint64_t>& seeds, const GenerationOptions& options,
                                   int batch = 8, const GenerationProgress& progress = {});

// Same, from prepared conditions.
std::vector<Image> generate_from_conditions(const ModelBundle& bundle, const std::vector<ConditionSet>& conds,
                                            const std::vector<std::uint64_t>& seeds, const GenerationOptions& options,
                                            int batch = 8, const GenerationProgress& progress = {});

// Derives per-sample seeds from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace spatext

namespace spatext {

// {"mode": "multi", "scales": {"global": s1, "scene": s2}} or
// {"mode": "fast", "scales": {"joint": s}}. Throws ValidationError.
GuidanceSpec guidance_from_json(const nlohmann::json& j);
nlohmann::json guidance_to_json(const GuidanceSpec& g);

}  // namespace spatext
