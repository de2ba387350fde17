#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "spatext/embed.hpp"
#include "spatext/image.hpp"
#include "spatext/scene.hpp"

namespace spatext {

enum class ShapeKind { Circle = 0, Square = 1, Triangle = 2 };

struct ShapesConfig {
    int size = 32;
    int min_shapes = 1;
    int max_shapes = 3;
    double min_area_fraction = 0.05;
    double max_side_fraction = 0.5;  // bounding-box side relative to the canvas
    int gap = 1;                     // minimum free pixels between shapes
    int max_retries = 200;

    void validate() const;
    nlohmann::json to_json() const;
};

struct ShapeSegment {
    Mask mask;
    int color = 0;
    ShapeKind shape = ShapeKind::Circle;

    std::string label() const;  // "{color} {shape}"
};

struct ShapesSample {
    Image image;
    std::vector<ShapeSegment> segments;
    int background = 0;
    std::string caption;

    // 0 = background, k = segments[k - 1].
    std::vector<int> label_map() const;
    std::vector<std::string> label_names() const;
};

// Pixel-center membership of an analytic shape with bounding box
// [x0, x0 + side) x [y0, y0 + side). Triangles point up.
bool shape_contains(ShapeKind shape, double x0, double y0, double side, double px, double py);
Mask rasterize_shape(ShapeKind shape, int x0, int y0, int side, int height, int width);

// 1-3 disjoint shapes in distinct colors on a background of yet another color.
// Throws std::runtime_error if placement fails max_retries times in a row.
ShapesSample gen_shapes(std::mt19937_64& rng, const ShapesConfig& config = {});

std::string make_caption(int background, const std::vector<ShapeSegment>& segments);

// --- dense corpus on disk ------------------------------------------------------
// root/manifest.json lists {"id", "split"} per sample;
// root/samples/<id>/{image.png, labels.png, labels.txt, caption.txt}.

struct DenseSample {
    std::string id;
    std::string split;
    Image image;
    int height = 0;
    int width = 0;
    std::vector<int> labels;  // 0 = unlabeled, k = label_names[k - 1]
    std::vector<std::string> label_names;
    std::string caption;

    Mask mask_of(int label) const;
};

struct CorpusSpec {
    int count = 5000;
    double eval_fraction = 0.1;
    std::uint64_t seed = 0;
    ShapesConfig shapes;
};

// Writes a freshly generated shapes corpus; returns the number of samples.
int write_shapes_corpus(const std::filesystem::path& root, const CorpusSpec& spec);
void write_dense_sample(const std::filesystem::path& root, const DenseSample& sample);
void write_manifest(const std::filesystem::path& root, const std::vector<std::pair<std::string, std::string>>& entries,
                    const nlohmann::json& meta);

struct CorpusIndex {
    std::vector<std::pair<std::string, std::string>> entries;  // (id, split)
    nlohmann::json meta;
};
CorpusIndex read_manifest(const std::filesystem::path& root);
DenseSample read_dense_sample(const std::filesystem::path& root, const std::string& id);
// Empty split loads everything.
std::vector<DenseSample> read_corpus(const std::filesystem::path& root, const std::string& split = "",
                                     std::size_t limit = 0);

// --- sparse evaluation inputs --------------------------------------------------

struct SparseEvalInput {
    std::string global_prompt;
    RawSpatioTextualMatrix rst;
    std::string source_id;

    SceneSpec to_scene() const;
    nlohmann::json to_json() const;
    static SparseEvalInput from_json(const nlohmann::json& j);
};

struct SparseInputConfig {
    double min_area_fraction = 0.05;
    int max_segments = 3;
};

// Keeps segments covering >= 5% of the canvas, draws K uniformly from
// [1, min(3, eligible)], picks K of them at random and prompts each "a {label}".
// Returns nullopt (skip) when no segment is eligible.
std::optional<SparseEvalInput> make_sparse_inputs(const std::vector<int>& labels, int height, int width,
                                                  const std::vector<std::string>& label_names,
                                                  const std::string& caption, std::mt19937_64& rng,
                                                  const std::string& source_id = "",
                                                  const SparseInputConfig& config = {});

void write_inputs(const std::filesystem::path& path, const std::vector<SparseEvalInput>& inputs);
std::vector<SparseEvalInput> read_inputs(const std::filesystem::path& path);

// (text embedding, image embedding) pairs for the prior: every labeled
// segment ("a {label}" vs its preprocessed crop) and every caption vs its frame.
struct EmbeddingPairs {
    std::vector<EmbeddingVector> text;
    std::vector<EmbeddingVector> image;
};
EmbeddingPairs collect_prior_pairs(const std::vector<DenseSample>& samples, const Embedder& embedder);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace spatext
