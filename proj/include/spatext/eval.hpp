#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "spatext/data.hpp"
#include "spatext/embed.hpp"
#include "spatext/pipeline.hpp"

namespace spatext {

// 1 - cos(embed_text(prompt), embed_frame(image)).
double global_distance(const Image& image, std::string_view global_prompt, const Embedder& embedder);

// Mean over segments of 1 - cos(embed_image(preprocess(image, S_k)), embed_text(prompt_k)).
// Throws ValidationError when the matrix has no segment.
double local_distance(const Image& image, const RawSpatioTextualMatrix& rst, const Embedder& embedder);

class Segmenter {
public:
    virtual ~Segmenter() = default;
    // Region of `image` that the segmenter assigns to the prompt's class.
    // Throws ValidationError when the prompt's class is unknown.
    virtual Mask predict(const Image& image, std::string_view prompt) const = 0;
};

// Nearest-palette classification plus connected components; the prediction
// for "a {color} {shape}" is the union of that color's components, ignoring
// specks under min_component_fraction of the frame.
class PaletteSegmenter final : public Segmenter {
public:
    explicit PaletteSegmenter(double min_component_fraction = 0.01) : min_fraction_(min_component_fraction) {}
    Mask predict(const Image& image, std::string_view prompt) const override;

private:
    double min_fraction_;
};

double mask_iou(const Mask& a, const Mask& b);

// Mean over segments of IOU(segmenter(image, prompt_k), S_k).
double local_iou(const Image& image, const RawSpatioTextualMatrix& rst, const Segmenter& segmenter);

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};
// Unbiased covariance. Throws ValidationError with fewer than d + 1 samples.
GaussianStats gaussian_stats(const std::vector<EmbeddingVector>& features);

inline constexpr double kFrechetEpsilon = 1e-6;

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with eps added to both diagonals.
double frechet_distance(const GaussianStats& a, const GaussianStats& b, double eps = kFrechetEpsilon);
double frechet_distance(const std::vector<EmbeddingVector>& a, const std::vector<EmbeddingVector>& b,
                        double eps = kFrechetEpsilon);

// Embedder the metrics score with: the same toy embedder with the
// text/image misalignment removed, so distances measure content.
ToyEmbedderConfig metric_embedder_config(const ToyEmbedderConfig& model_config);

// Moves every local prompt to the next segment (k -> k + 1, last -> first).
SparseEvalInput exchange_prompts(const SparseEvalInput& input);

struct EvalConfig {
    GenerationOptions generation;
    std::uint64_t seed = 0;  // sample i uses derive_seed(seed, i)
    int batch = 16;
    std::string label = "";  // free-form tag stored in the report
};

struct EvalRecord {
    std::string id;
    std::string source_id;
    int segments = 0;
    double global_distance = 0.0;
    double local_distance = 0.0;
    double local_iou = 0.0;
    std::string error;  // non-empty when generation or scoring failed

    bool ok() const { return error.empty(); }
};

struct EvalReport {
    std::string config_fingerprint;
    std::string label;
    std::vector<EvalRecord> records;
    int n_ok = 0;
    double mean_global_distance = 0.0;
    double mean_local_distance = 0.0;
    double mean_local_iou = 0.0;
    std::optional<double> frechet;  // vs reference frames, when enough are given

    nlohmann::json to_json() const;
};

// Generates one image per input and scores it. Failures are recorded per
// sample. `reference` (frames of real samples) enables the Frechet distance.
// `generated` receives one image per input, empty where generation failed.
// Throws ValidationError on an empty input list.
EvalReport evaluate(const ModelBundle& bundle, const std::vector<SparseEvalInput>& inputs, const EvalConfig& config,
                    const std::vector<Image>& reference = {}, std::vector<Image>* generated = nullptr);

// Recomputes the aggregates from the records.
void finalize_report(EvalReport& report);

}  // namespace spatext
