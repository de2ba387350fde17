#include "spatext/pipeline.hpp"

#include <algorithm>

#include "spatext/repr.hpp"
#include "spatext/sampler.hpp"

namespace spatext {

ConditionSet prepare_conditions(const ModelBundle& bundle, const Embedder& embedder, const SceneSpec& scene,
                                const GenerationOptions& options) {
    validate_scene(scene);
    if (scene.height != bundle.resolution || scene.width != bundle.resolution) {
        throw ValidationError("scene canvas " + std::to_string(scene.height) + "x" + std::to_string(scene.width) +
                              " does not match the checkpoint resolution " + std::to_string(bundle.resolution));
    }
    if (embedder.dim() != bundle.denoiser.text_dim()) {
        throw ValidationError("embedder dimension does not match the checkpoint");
    }
    ConditionSet conds;
    const std::string text = options.concat_prompts ? concat_prompts(scene) : trim(scene.global_prompt);
    if (!text.empty()) conds.global_text = embedder.embed_text(text);

    const RawSpatioTextualMatrix rst = to_rst(scene);
    const int res = bundle.model_resolution();
    if (bundle.cond == CondKind::Binary) {
        conds.spatial = resample_nearest(build_binary(rst), res, res);
    } else {
        const PriorModel* prior = options.use_prior && bundle.prior ? &*bundle.prior : nullptr;
        conds.spatial = resample_st(build_st_infer(rst, embedder, prior), res, res).to_tensor();
    }
    if (conds.spatial->c() != bundle.denoiser.cond_channels()) {
        throw ValidationError("spatial condition has " + std::to_string(conds.spatial->c()) +
                              " channels, the checkpoint expects " + std::to_string(bundle.denoiser.cond_channels()));
    }
    return conds;
}

std::vector<Image> generate_from_conditions(const ModelBundle& bundle, const std::vector<ConditionSet>& conds,
                                            const std::vector<std::uint64_t>& seeds, const GenerationOptions& options,
                                            int batch, const GenerationProgress& progress) {
    if (conds.size() != seeds.size()) throw ValidationError("one seed per scene is required");
    if (batch < 1) throw ValidationError("batch must be positive");
    DdimOptions ddim;
    ddim.steps = options.steps > 0 ? options.steps : bundle.default_sampling_steps();
    ddim.clip_x0 = bundle.space == Space::Pixel;
    const int res = bundle.model_resolution();

    std::vector<Image> out;
    out.reserve(conds.size());
    const int total = static_cast<int>(conds.size());
    const int chunks = (total + batch - 1) / batch;
    for (int start = 0; start < total; start += batch) {
        const int end = std::min(total, start + batch);
        const std::vector<ConditionSet> chunk(conds.begin() + start, conds.begin() + end);
        const std::vector<std::uint64_t> chunk_seeds(seeds.begin() + start, seeds.begin() + end);
        if (options.step_progress) {
            const int offset = (start / batch) * ddim.steps;
            ddim.progress = [&options, offset, all = chunks * ddim.steps](int done, int) {
                options.step_progress(offset + done, all);
            };
        }
        Tensor x0 = ddim_sample(bundle.denoiser, bundle.schedule, chunk, options.guidance, chunk_seeds, res, res, ddim);
        if (bundle.space == Space::Latent) x0 = bundle.codec.decode(x0);
        for (int i = 0; i < x0.n(); ++i) out.push_back(tensor_to_image(x0, i));
        if (progress) progress(end, total);
    }
    return out;
}

std::vector<Image> generate_images(const ModelBundle& bundle, const std::vector<SceneSpec>& scenes,
                                   const std::vector<std::uint64_t>& seeds, const GenerationOptions& options,
                                   int batch, const GenerationProgress& progress) {
    const ToyEmbedder embedder(bundle.embedder);
    std::vector<ConditionSet> conds;
    conds.reserve(scenes.size());
    for (const SceneSpec& s : scenes) conds.push_back(prepare_conditions(bundle, embedder, s, options));
    return generate_from_conditions(bundle, conds, seeds, options, batch, progress);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    // splitmix64 over (base, index)
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace spatext

namespace spatext {

GuidanceSpec guidance_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("guidance must be an object");
    const std::string mode = j.value("mode", std::string("fast"));
    if (!j.contains("scales") || !j["scales"].is_object()) throw ValidationError("guidance needs a scales object");
    const auto& s = j["scales"];
    auto scale = [&](const char* key) {
        if (!s.contains(key) || !s[key].is_number()) {
            throw ValidationError(std::string("guidance scales need a numeric '") + key + "'");
        }
        return s[key].get<double>();
    };
    GuidanceSpec g;
    if (mode == "fast") {
        g = GuidanceSpec::fast(scale("joint"));
    } else if (mode == "multi") {
        g = GuidanceSpec::multi(scale("global"), scale("scene"));
    } else {
        throw ValidationError("unknown guidance mode '" + mode + "' (expected multi or fast)");
    }
    g.validate(2);
    return g;
}

nlohmann::json guidance_to_json(const GuidanceSpec& g) {
    if (g.mode == GuidanceMode::Fast) return {{"mode", "fast"}, {"scales", {{"joint", g.scales.at(0)}}}};
    return {{"mode", "multi"}, {"scales", {{"global", g.scales.at(0)}, {"scene", g.scales.at(1)}}}};
}

}  // namespace spatext
