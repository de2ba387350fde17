#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spatext/checkpoint.hpp"
#include "spatext/codec.hpp"
#include "spatext/data.hpp"
#include "spatext/prior.hpp"

namespace spatext {

struct TrainConfig {
    Space space = Space::Pixel;
    CondKind cond = CondKind::SpatioTextual;
    long steps = 20000;
    long pretrain_steps = 0;  // extra text-only steps run before the input layer is extended
    int batch = 16;
    double learning_rate = 0.0;  // 0: 6e-5 pixel, 1e-4 latent
    double grad_clip = 1.0;
    double lambda_vlb = 0.001;
    double dropout = 0.1;
    int diffusion_steps = 1000;
    ScheduleKind schedule = ScheduleKind::Linear;
    std::vector<int> widths = {32, 64, 64};
    int embed_dim = 64;
    bool learn_variance = true;  // pixel only; the latent loss is L_simple
    double min_area_fraction = 0.05;
    int max_segments = 3;
    CodecTrainConfig codec;  // latent only
    ToyEmbedderConfig embedder;
    std::uint64_t seed = 0;
    int log_every = 100;

    double effective_learning_rate() const;
    void validate() const;
    nlohmann::json to_json() const;
};

// One training example with its embeddings precomputed.
struct TrainExample {
    Tensor image;  // [1, 3, H, W] in [-1, 1]
    std::vector<Mask> segments;
    std::vector<EmbeddingVector> segment_vectors;  // embed_image of each preprocessed segment
    EmbeddingVector caption_vector;                // embed_text(caption)
};

std::vector<TrainExample> prepare_examples(const std::vector<DenseSample>& samples, const Embedder& embedder);

struct TrainStats {
    long steps = 0;
    long samples = 0;
    long text_dropped = 0;
    long spatial_dropped = 0;
    long both_dropped = 0;
    long empty_scenes = 0;  // no eligible segment, so the map was zero anyway
    double first_loss = 0.0;
    double last_loss = 0.0;  // mean over the last log window
    double codec_mse = 0.0;
};

struct TrainLog {
    long step = 0;
    double loss = 0.0;  // window mean of the total loss
    double simple = 0.0;
    double vlb = 0.0;
};

struct TrainResult {
    ModelBundle bundle;
    TrainStats stats;
};

// Seed-deterministic. The prior, when given, is stored in the checkpoint for
// inference; training itself conditions on image embeddings only.
TrainResult train_model(const std::vector<TrainExample>& examples, const TrainConfig& config,
                        const std::optional<PriorModel>& prior = std::nullopt,
                        const std::function<void(const TrainLog&)>& log = {});

}  // namespace spatext
