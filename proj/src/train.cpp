#include "spatext/train.hpp"

#include <cmath>
#include <random>

#include "spatext/guidance.hpp"
#include "spatext/losses.hpp"
#include "spatext/repr.hpp"

namespace spatext {

double TrainConfig::effective_learning_rate() const {
    if (learning_rate > 0.0) return learning_rate;
    return space == Space::Latent ? 1e-4 : 6e-5;
}

void TrainConfig::validate() const {
    if (steps < 1) throw ValidationError("steps must be positive");
    if (pretrain_steps < 0) throw ValidationError("pretrain_steps must be non-negative");
    if (batch < 1) throw ValidationError("batch must be positive");
    if (learning_rate < 0.0 || !std::isfinite(learning_rate)) throw ValidationError("invalid learning rate");
    if (lambda_vlb < 0.0) throw ValidationError("lambda must be non-negative");
    if (dropout < 0.0 || dropout > 1.0) throw ValidationError("dropout must be in [0, 1]");
    if (diffusion_steps < 2) throw ValidationError("diffusion_steps must be at least 2");
    if (widths.size() != 3) throw ValidationError("widths needs exactly three entries");
    if (max_segments < 1) throw ValidationError("max_segments must be positive");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"space", to_string(space)},
            {"cond", to_string(cond)},
            {"steps", steps},
            {"pretrain_steps", pretrain_steps},
            {"batch", batch},
            {"learning_rate", effective_learning_rate()},
            {"grad_clip", grad_clip},
            {"lambda", lambda_vlb},
            {"dropout", dropout},
            {"diffusion_steps", diffusion_steps},
            {"schedule", to_string(schedule)},
            {"widths", widths},
            {"embed_dim", embed_dim},
            {"learn_variance", learn_variance},
            {"min_area_fraction", min_area_fraction},
            {"max_segments", max_segments},
            {"codec_steps", codec.steps},
            {"seed", seed}};
}

std::vector<TrainExample> prepare_examples(const std::vector<DenseSample>& samples, const Embedder& embedder) {
    std::vector<TrainExample> out(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const DenseSample& s = samples[i];
        TrainExample& e = out[i];
        e.image = images_to_tensor({s.image});
        for (int k = 1; k <= static_cast<int>(s.label_names.size()); ++k) {
            Mask m = s.mask_of(k);
            if (m.count() == 0) continue;
            e.segment_vectors.push_back(embedder.embed_image(embedder.preprocess(s.image, m)));
            e.segments.push_back(std::move(m));
        }
        e.caption_vector = embedder.embed_text(s.caption);
    }
    return out;
}

namespace {

struct Batcher {
    const std::vector<TrainExample>& examples;
    const TrainConfig& config;
    int model_res;
    int space_channels;
    bool spatial;  // false while pretraining

    TrainingBatch draw(std::mt19937_64& rng, TrainStats& stats) const {
        const int n = config.batch;
        const int h = examples.front().image.h(), w = examples.front().image.w();
        const int d = static_cast<int>(examples.front().caption_vector.size());
        const int cond_c = !spatial ? 0 : config.cond == CondKind::Binary ? 1 : d;

        TrainingBatch b;
        b.x0 = Tensor(n, 3, h, w);
        b.text = Tensor(n, d, 1, 1);
        b.text_null.assign(n, 0);
        b.t.resize(n);
        if (cond_c > 0) b.cond_map = Tensor(n, cond_c, model_res, model_res);
        std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
        std::uniform_int_distribution<int> step(1, config.diffusion_steps);
        for (int i = 0; i < n; ++i) {
            const TrainExample& ex = examples[pick(rng)];
            assign_sample(b.x0, i, ex.image);
            b.t[i] = step(rng);
            const DropoutDraw drop = draw_dropout(config.dropout, rng);
            b.text_null[i] = drop.drop_text ? 1 : 0;
            std::copy(ex.caption_vector.begin(), ex.caption_vector.end(), b.text.sample(i));

            if (spatial) {
                // Pick the segments even when the map is dropped so the random
                // stream does not depend on the dropout outcome.
                const std::vector<int> chosen =
                    select_training_indices(ex.segments, rng, config.min_area_fraction, config.max_segments);
                if (chosen.empty()) ++stats.empty_scenes;
                if (!drop.drop_spatial && !chosen.empty()) {
                    std::vector<Mask> masks;
                    std::vector<EmbeddingVector> vecs;
                    for (int k : chosen) {
                        masks.push_back(ex.segments[k]);
                        vecs.push_back(config.cond == CondKind::Binary ? EmbeddingVector{1.0f} : ex.segment_vectors[k]);
                    }
                    const SpatioTextualTensor st =
                        resample_st(paint_segments(h, w, masks, vecs), model_res, model_res);
                    assign_sample(b.cond_map, i, st.to_tensor());
                }
            }
            stats.text_dropped += drop.drop_text;
            stats.spatial_dropped += drop.drop_spatial;
            stats.both_dropped += drop.drop_text && drop.drop_spatial;
            ++stats.samples;
        }
        b.eps = Tensor(n, space_channels, model_res, model_res);
        std::normal_distribution<float> normal(0.0f, 1.0f);
        for (float& v : b.eps.values()) v = normal(rng);
        return b;
    }
};

}  // namespace

TrainResult train_model(const std::vector<TrainExample>& examples, const TrainConfig& config,
                        const std::optional<PriorModel>& prior, const std::function<void(const TrainLog&)>& log) {
    config.validate();
    if (examples.empty()) throw ValidationError("training set is empty");
    const int res = examples.front().image.h();
    if (examples.front().image.w() != res) throw ValidationError("training images must be square");
    for (const TrainExample& e : examples) {
        if (e.image.h() != res || e.image.w() != res) throw ValidationError("training images differ in size");
    }
    const int d = static_cast<int>(examples.front().caption_vector.size());
    if (prior && prior->dim() != d) throw ValidationError("prior dimension does not match the embedder");

    std::mt19937_64 rng(config.seed);
    TrainResult result;
    ModelBundle& bundle = result.bundle;
    bundle.space = config.space;
    bundle.cond = config.cond;
    bundle.resolution = res;
    bundle.embedder = config.embedder;
    bundle.prior = prior;
    bundle.schedule = make_schedule(config.diffusion_steps, config.schedule);
    bundle.train_config = config.to_json();

    if (config.space == Space::Latent) {
        std::vector<Image> images;
        images.reserve(examples.size());
        for (const TrainExample& e : examples) images.push_back(tensor_to_image(e.image, 0));
        CodecTrainConfig cc = config.codec;
        cc.seed = rng();
        CodecTrainResult trained = train_codec(images, cc);
        bundle.codec = std::move(trained.codec);
        result.stats.codec_mse = trained.final_train_mse;
    }
    if (res % bundle.codec.config().factor != 0) throw ValidationError("resolution is not divisible by the codec factor");

    DenoiserConfig dc;
    dc.space_channels = config.space == Space::Latent ? bundle.codec.config().latent_channels : 3;
    dc.cond_channels = 0;
    dc.text_dim = d;
    dc.widths = config.widths;
    dc.embed_dim = config.embed_dim;
    dc.learn_variance = config.space == Space::Pixel && config.learn_variance;
    Denoiser model(dc, rng());

    const int model_res = bundle.model_resolution();
    nn::AdamConfig ac;
    ac.learning_rate = config.effective_learning_rate();
    ac.grad_clip = config.grad_clip;

    TrainLog window;
    long window_n = 0;
    bool first = true;
    auto run_phase = [&](long steps, bool spatial, long step_offset) {
        Batcher batcher{examples, config, model_res, dc.space_channels, spatial};
        nn::Adam adam(ac);
        for (long s = 0; s < steps; ++s) {
            TrainingBatch b = batcher.draw(rng, result.stats);
            model.zero_grad();
            LossTerms terms;
            if (config.space == Space::Latent) {
                terms.simple = terms.total = loss_latent(model, bundle.codec, b, bundle.schedule, true);
            } else {
                terms = loss_hybrid(model, b, bundle.schedule, config.lambda_vlb, true);
            }
            if (!std::isfinite(terms.total)) {
                throw std::runtime_error("training diverged at step " + std::to_string(step_offset + s + 1) +
                                         " (simple " + std::to_string(terms.simple) + ", vlb " +
                                         std::to_string(terms.vlb) + ")");
            }
            adam.step(model.parameters());
            if (first) {
                result.stats.first_loss = terms.total;
                first = false;
            }
            window.loss += terms.total;
            window.simple += terms.simple;
            window.vlb += terms.vlb;
            ++window_n;
            const long global_step = step_offset + s + 1;
            if (global_step % std::max(1, config.log_every) == 0 || s + 1 == steps) {
                TrainLog entry{global_step, window.loss / window_n, window.simple / window_n, window.vlb / window_n};
                result.stats.last_loss = entry.loss;
                if (log) log(entry);
                window = TrainLog{};
                window_n = 0;
            }
        }
    };

    run_phase(config.pretrain_steps, false, 0);
    const int cond_channels = config.cond == CondKind::Binary ? 1 : d;
    model = extend_input_channels(std::move(model), cond_channels, rng);
    run_phase(config.steps, true, config.pretrain_steps);

    result.stats.steps = config.pretrain_steps + config.steps;
    bundle.denoiser = std::move(model);
    bundle.train_steps = result.stats.steps;
    return result;
}

}  // namespace spatext
