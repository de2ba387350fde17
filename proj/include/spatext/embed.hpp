#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "spatext/image.hpp"

namespace spatext {

using EmbeddingVector = std::vector<float>;

// --- toy vocabulary --------------------------------------------------------

inline constexpr int kNumColors = 6;
inline constexpr int kNumShapes = 3;
inline constexpr std::array<std::string_view, kNumColors> kColorNames = {"red",   "green", "blue",
                                                                         "yellow", "white", "black"};
inline constexpr std::array<std::string_view, kNumShapes> kShapeNames = {"circle", "square", "triangle"};

struct Rgb {
    float r, g, b;
};

// Rendering color of a palette entry. "black" is a dark gray so that it stays
// distinguishable from blacked-out (exactly zero) pixels.
Rgb palette_color(int color);
int color_index(std::string_view name);  // -1 if unknown
int shape_index(std::string_view name);  // -1 if unknown

// Nearest palette entry; with include_blackout, exact black (0,0,0) competes as -1.
int nearest_palette(float r, float g, float b, bool include_blackout);

struct PromptClause {
    bool background = false;
    int color = 0;
    int shape = 0;  // unused for background clauses
};

// Comma-separated clauses, each "a {color} {shape}" or "a {color} background"
// (the article is optional, case-insensitive). Throws ValidationError on
// anything outside the vocabulary.
std::vector<PromptClause> parse_toy_prompt(std::string_view prompt);

// --- connected components over a class map ---------------------------------

struct Component {
    int cls = 0;
    std::size_t area = 0;
    int y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // inclusive bounding box
    double sum_y = 0.0;
    std::size_t core = 0;  // pixels whose four neighbours are all inside the component
    bool touches_top = false, touches_bottom = false, touches_left = false, touches_right = false;
    std::vector<int> pixels;  // flat indices

    bool touches_all_sides() const { return touches_top && touches_bottom && touches_left && touches_right; }
    double fill_ratio() const;
    // Centroid row relative to the bounding box, in [0, 1].
    double centroid_y() const;
};

// 4-connected components of equal class; pixels with class < 0 are skipped.
std::vector<Component> connected_components(const std::vector<int>& classes, int height, int width);

// Soft assignment to {circle, square, triangle} from fill ratio and centroid height.
std::array<double, kNumShapes> shape_weights(const Component& c);

// --- segment preprocessing -------------------------------------------------

// Tight square around the mask (centered on its bounding box, shifted to stay
// inside the image when it fits), off-mask pixels set to 0, resized to `size`.
// Throws ValidationError on an empty or mis-shaped mask.
Image preprocess_segment(const Image& image, const Mask& mask, int size, Interpolation interp);

// The square crop before resizing; exposed for tests.
Image crop_segment_square(const Image& image, const Mask& mask);

// --- embedders ---------------------------------------------------------------

// Joint text/image embedding space. Implementations are immutable and
// concurrently callable.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual int dim() const = 0;
    virtual int input_size() const = 0;
    virtual Interpolation interpolation() const = 0;
    virtual EmbeddingVector embed_image(const Image& patch) const = 0;
    virtual EmbeddingVector embed_text(std::string_view prompt) const = 0;
    virtual std::string id() const = 0;
    virtual nlohmann::json config_json() const = 0;

    Image preprocess(const Image& image, const Mask& mask) const {
        return preprocess_segment(image, mask, input_size(), interpolation());
    }
    // Whole frame resized to the input size.
    EmbeddingVector embed_frame(const Image& image) const;
};

struct ToyEmbedderConfig {
    int d_embed = 16;
    int input_size = 32;
    double misalignment_strength = 1.0;  // 0 gives the identity
    std::uint64_t misalignment_seed = 7;
    double signature_scale = 0.3;
    std::uint64_t signature_seed = 11;
    Interpolation interpolation = Interpolation::Bilinear;

    nlohmann::json to_json() const;
    static ToyEmbedderConfig from_json(const nlohmann::json& j);
};

// Deterministic stand-in for a contrastive text/image model. Basis layout:
// object colors, shapes, background colors, then one null-content axis.
// canonical(c, s) = normalize(e_c + e_s + sigma * C_cs) where C_cs is a fixed
// random unit vector per pair. Text embeddings are R * canonical with R an
// orthogonal misalignment; image embeddings are unrotated.
class ToyEmbedder final : public Embedder {
public:
    static constexpr int kMinDim = kNumColors + kNumShapes + kNumColors + 1;

    explicit ToyEmbedder(const ToyEmbedderConfig& config = {});

    int dim() const override { return config_.d_embed; }
    int input_size() const override { return config_.input_size; }
    Interpolation interpolation() const override { return config_.interpolation; }
    EmbeddingVector embed_image(const Image& patch) const override;
    EmbeddingVector embed_text(std::string_view prompt) const override;
    std::string id() const override;
    nlohmann::json config_json() const override { return config_.to_json(); }

    const ToyEmbedderConfig& config() const { return config_; }
    const Eigen::MatrixXd& misalignment() const { return rotation_; }
    Eigen::VectorXd canonical_object(int color, int shape) const;
    Eigen::VectorXd canonical_background(int color) const;
    Eigen::VectorXd null_vector() const;
    // Unrotated text-side vector: what embed_text returns with R = I.
    Eigen::VectorXd canonical_text(std::string_view prompt) const;

private:
    ToyEmbedderConfig config_;
    Eigen::MatrixXd rotation_;
    std::vector<Eigen::VectorXd> objects_;  // color * kNumShapes + shape
};

double cosine(const EmbeddingVector& a, const EmbeddingVector& b);
EmbeddingVector to_embedding(const Eigen::VectorXd& v);
Eigen::VectorXd to_eigen(const EmbeddingVector& v);

}  // namespace spatext
