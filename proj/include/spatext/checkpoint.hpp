#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "spatext/codec.hpp"
#include "spatext/denoiser.hpp"
#include "spatext/embed.hpp"
#include "spatext/prior.hpp"
#include "spatext/schedule.hpp"

namespace spatext {

enum class Space { Pixel, Latent };
// What the first layer receives next to x_t: the spatio-textual map (d
// channels) or the binary-mask ablation (1 channel).
enum class CondKind { SpatioTextual, Binary };

Space parse_space(const std::string& s);
std::string to_string(Space s);
CondKind parse_cond_kind(const std::string& s);
std::string to_string(CondKind k);

inline constexpr int kCheckpointSchemaVersion = 1;

// Everything needed to sample: denoiser, schedule, space, codec, embedder
// configuration and (optionally) the prior.
struct ModelBundle {
    Space space = Space::Pixel;
    CondKind cond = CondKind::SpatioTextual;
    int resolution = 32;  // image side in pixels
    Denoiser denoiser;
    NoiseSchedule schedule;
    Codec codec = Codec::identity();
    ToyEmbedderConfig embedder;
    std::optional<PriorModel> prior;
    long train_steps = 0;
    nlohmann::json train_config = nlohmann::json::object();

    int model_resolution() const { return resolution / codec.config().factor; }
    int default_sampling_steps() const { return space == Space::Latent ? 50 : 250; }
    // Header without tensors; the fingerprint is FNV-1a over its canonical dump.
    nlohmann::json header() const;
    std::string fingerprint() const;
};

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle);
// Throws ValidationError for files that are not checkpoints, have another
// schema version or whose fingerprint does not match their header.
ModelBundle load_checkpoint(const std::filesystem::path& path);
// Header only, without reading the weights.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace spatext
