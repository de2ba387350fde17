#include "spatext/embed.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

namespace spatext {
namespace {

constexpr std::array<Rgb, kNumColors> kPalette = {{
    {0.90f, 0.12f, 0.12f},
    {0.15f, 0.70f, 0.20f},
    {0.15f, 0.25f, 0.85f},
    {0.95f, 0.85f, 0.15f},
    {0.95f, 0.95f, 0.95f},
    {0.20f, 0.20f, 0.20f},
}};

// Image-side analysis thresholds, as fractions of the patch area.
constexpr double kBackgroundMinArea = 0.35;
constexpr double kObjectMinArea = 0.02;
constexpr double kObjectFullWeightArea = 0.05;
constexpr double kObjectMinCore = 0.01;
constexpr double kObjectMinFill = 0.25;
// A backdrop is only looked for when (almost) nothing is blacked out.
constexpr double kBackgroundMaxBlackout = 0.02;
constexpr double kShapeTemperature = 0.08;

struct ShapePrototype {
    double fill;
    double centroid_y;
};
constexpr std::array<ShapePrototype, kNumShapes> kPrototypes = {{{0.785, 0.5}, {1.0, 0.5}, {0.5, 2.0 / 3.0}}};

int color_axis(int c) { return c; }
int shape_axis(int s) { return kNumColors + s; }
int background_axis(int c) { return kNumColors + kNumShapes + c; }
constexpr int kNullAxis = kNumColors + kNumShapes + kNumColors;

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

Eigen::VectorXd unit(Eigen::VectorXd v) {
    const double n = v.norm();
    if (n > 0) v /= n;
    return v;
}

}  // namespace

Rgb palette_color(int color) { return kPalette.at(static_cast<std::size_t>(color)); }

int color_index(std::string_view name) {
    for (int i = 0; i < kNumColors; ++i)
        if (kColorNames[i] == name) return i;
    return -1;
}

int shape_index(std::string_view name) {
    for (int i = 0; i < kNumShapes; ++i)
        if (kShapeNames[i] == name) return i;
    return -1;
}

int nearest_palette(float r, float g, float b, bool include_blackout) {
    int best = -1;
    float best_d = include_blackout ? r * r + g * g + b * b : std::numeric_limits<float>::infinity();
    for (int i = 0; i < kNumColors; ++i) {
        const float dr = r - kPalette[i].r, dg = g - kPalette[i].g, db = b - kPalette[i].b;
        const float d = dr * dr + dg * dg + db * db;
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

std::vector<PromptClause> parse_toy_prompt(std::string_view prompt) {
    const std::string text = lower(prompt);
    std::vector<PromptClause> clauses;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        std::istringstream words(text.substr(start, comma - start));
        std::vector<std::string> tokens;
        for (std::string w; words >> w;) tokens.push_back(w);
        if (!tokens.empty() && (tokens.front() == "a" || tokens.front() == "an")) tokens.erase(tokens.begin());
        const bool ok_shape = tokens.size() == 2 && color_index(tokens[0]) >= 0 &&
                              (tokens[1] == "background" || shape_index(tokens[1]) >= 0);
        if (!ok_shape) throw ValidationError("out-of-vocabulary prompt: '" + std::string(prompt) + "'");
        PromptClause clause;
        clause.color = color_index(tokens[0]);
        clause.background = tokens[1] == "background";
        clause.shape = clause.background ? 0 : shape_index(tokens[1]);
        clauses.push_back(clause);
        start = comma + 1;
    }
    return clauses;
}

double Component::fill_ratio() const {
    return static_cast<double>(area) / (static_cast<double>(y1 - y0 + 1) * (x1 - x0 + 1));
}

double Component::centroid_y() const {
    return (sum_y / static_cast<double>(area) - y0 + 0.5) / static_cast<double>(y1 - y0 + 1);
}

std::vector<Component> connected_components(const std::vector<int>& classes, int height, int width) {
    std::vector<Component> out;
    std::vector<std::uint8_t> seen(classes.size(), 0);
    std::vector<int> stack;
    for (int start = 0; start < height * width; ++start) {
        if (seen[start] || classes[start] < 0) continue;
        Component comp;
        comp.cls = classes[start];
        comp.y0 = comp.y1 = start / width;
        comp.x0 = comp.x1 = start % width;
        stack.push_back(start);
        seen[start] = 1;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int y = p / width, x = p % width;
            comp.pixels.push_back(p);
            ++comp.area;
            comp.sum_y += y;
            comp.y0 = std::min(comp.y0, y);
            comp.y1 = std::max(comp.y1, y);
            comp.x0 = std::min(comp.x0, x);
            comp.x1 = std::max(comp.x1, x);
            comp.touches_top |= y == 0;
            comp.touches_bottom |= y == height - 1;
            comp.touches_left |= x == 0;
            comp.touches_right |= x == width - 1;
            const int nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            int inside = 0;
            for (const auto& n : nbrs) {
                if (n[0] < 0 || n[0] >= height || n[1] < 0 || n[1] >= width) continue;
                const int q = n[0] * width + n[1];
                inside += classes[q] == comp.cls;
                if (!seen[q] && classes[q] == comp.cls) {
                    seen[q] = 1;
                    stack.push_back(q);
                }
            }
            comp.core += inside == 4;
        }
        std::sort(comp.pixels.begin(), comp.pixels.end());
        out.push_back(std::move(comp));
    }
    return out;
}

std::array<double, kNumShapes> shape_weights(const Component& c) {
    const double fill = c.fill_ratio(), cy = c.centroid_y();
    std::array<double, kNumShapes> logits{};
    double best = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < kNumShapes; ++s) {
        const double df = fill - kPrototypes[s].fill, dc = cy - kPrototypes[s].centroid_y;
        logits[s] = -(df * df + dc * dc) / (kShapeTemperature * kShapeTemperature);
        best = std::max(best, logits[s]);
    }
    double sum = 0.0;
    for (double& l : logits) sum += (l = std::exp(l - best));
    for (double& l : logits) l /= sum;
    return logits;
}

Image crop_segment_square(const Image& image, const Mask& mask) {
    if (mask.height != image.height || mask.width != image.width) {
        throw ValidationError("preprocess_segment: mask " + std::to_string(mask.height) + "x" +
                              std::to_string(mask.width) + " does not match image " + std::to_string(image.height) +
                              "x" + std::to_string(image.width));
    }
    int y0 = image.height, y1 = -1, x0 = image.width, x1 = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y1 < 0) throw ValidationError("preprocess_segment: empty mask");
    const int side = std::max(y1 - y0 + 1, x1 - x0 + 1);
    auto place = [side](int lo, int hi, int extent) {
        int start = lo - (side - (hi - lo + 1)) / 2;
        if (side <= extent) return std::clamp(start, 0, extent - side);
        return (extent - side) / 2;
    };
    const int sy = place(y0, y1, image.height);
    const int sx = place(x0, x1, image.width);
    Image crop(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const int iy = sy + y, ix = sx + x;
            if (iy < 0 || iy >= image.height || ix < 0 || ix >= image.width || !mask.at(iy, ix)) continue;
            for (int c = 0; c < 3; ++c) crop.at(y, x, c) = image.at(iy, ix, c);
        }
    return crop;
}

Image preprocess_segment(const Image& image, const Mask& mask, int size, Interpolation interp) {
    return resize(crop_segment_square(image, mask), size, size, interp);
}

EmbeddingVector Embedder::embed_frame(const Image& image) const {
    return embed_image(resize(image, input_size(), input_size(), interpolation()));
}

nlohmann::json ToyEmbedderConfig::to_json() const {
    return {{"name", "toy"},
            {"d_embed", d_embed},
            {"input_size", input_size},
            {"misalignment_strength", misalignment_strength},
            {"misalignment_seed", misalignment_seed},
            {"signature_scale", signature_scale},
            {"signature_seed", signature_seed},
            {"interpolation", to_string(interpolation)}};
}

ToyEmbedderConfig ToyEmbedderConfig::from_json(const nlohmann::json& j) {
    ToyEmbedderConfig c;
    try {
        if (j.value("name", std::string("toy")) != "toy") {
            throw ValidationError("unknown embedder '" + j.value("name", std::string()) + "'");
        }
        c.d_embed = j.value("d_embed", c.d_embed);
        c.input_size = j.value("input_size", c.input_size);
        c.misalignment_strength = j.value("misalignment_strength", c.misalignment_strength);
        c.misalignment_seed = j.value("misalignment_seed", c.misalignment_seed);
        c.signature_scale = j.value("signature_scale", c.signature_scale);
        c.signature_seed = j.value("signature_seed", c.signature_seed);
        c.interpolation = parse_interpolation(j.value("interpolation", std::string("bilinear")));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("embedder config: ") + e.what());
    }
    return c;
}

ToyEmbedder::ToyEmbedder(const ToyEmbedderConfig& config) : config_(config) {
    const int d = config.d_embed;
    if (d < kMinDim) throw ValidationError("toy embedder needs d_embed >= " + std::to_string(kMinDim));
    if (config.input_size < 4) throw ValidationError("toy embedder input_size must be at least 4");
    if (!std::isfinite(config.misalignment_strength) || !std::isfinite(config.signature_scale) ||
        config.signature_scale < 0) {
        throw ValidationError("toy embedder: misalignment and signature scales must be finite");
    }

    // Cayley transform of a scaled random skew-symmetric matrix: exactly orthogonal, identity at strength 0.
    std::mt19937_64 rng(config.misalignment_seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = normal(rng);
    const Eigen::MatrixXd skew = 0.5 * config.misalignment_strength * (m - m.transpose());
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    rotation_ = (eye - skew).partialPivLu().solve(eye + skew);

    std::mt19937_64 sig_rng(config.signature_seed);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    for (int c = 0; c < kNumColors; ++c)
        for (int s = 0; s < kNumShapes; ++s) {
            Eigen::VectorXd sig(d);
            for (int i = 0; i < d; ++i) sig(i) = std_normal(sig_rng);
            Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
            v(color_axis(c)) = 1.0;
            v(shape_axis(s)) = 1.0;
            v += config.signature_scale * unit(sig);
            objects_.push_back(unit(v));
        }
}

Eigen::VectorXd ToyEmbedder::canonical_object(int color, int shape) const {
    return objects_.at(static_cast<std::size_t>(color * kNumShapes + shape));
}

Eigen::VectorXd ToyEmbedder::canonical_background(int color) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(config_.d_embed);
    v(background_axis(color)) = 1.0;
    return v;
}

Eigen::VectorXd ToyEmbedder::null_vector() const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(config_.d_embed);
    v(kNullAxis) = 1.0;
    return v;
}

Eigen::VectorXd ToyEmbedder::canonical_text(std::string_view prompt) const {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(config_.d_embed);
    for (const PromptClause& c : parse_toy_prompt(prompt)) {
        sum += c.background ? canonical_background(c.color) : canonical_object(c.color, c.shape);
    }
    return unit(sum);
}

EmbeddingVector ToyEmbedder::embed_text(std::string_view prompt) const {
    return to_embedding(unit(rotation_ * canonical_text(prompt)));
}

EmbeddingVector ToyEmbedder::embed_image(const Image& patch) const {
    if (patch.empty()) throw std::invalid_argument("embed_image: empty patch");
    const int h = patch.height, w = patch.width;
    std::vector<int> classes(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            classes[static_cast<std::size_t>(y) * w + x] =
                nearest_palette(patch.at(y, x, 0), patch.at(y, x, 1), patch.at(y, x, 2), true);
    const std::vector<Component> comps = connected_components(classes, h, w);
    const double total = static_cast<double>(h) * w;

    const auto blackout = static_cast<double>(std::count(classes.begin(), classes.end(), -1));
    int background = -1;
    for (int i = 0; i < static_cast<int>(comps.size()); ++i) {
        const Component& c = comps[i];
        if (blackout > kBackgroundMaxBlackout * total) break;
        if (!c.touches_all_sides() || c.area < kBackgroundMinArea * total) continue;
        if (background < 0 || c.area > comps[background].area) background = i;
    }
    std::vector<int> objects;
    for (int i = 0; i < static_cast<int>(comps.size()); ++i) {
        const Component& c = comps[i];
        if (i == background || c.area < kObjectMinArea * total || c.core < kObjectMinCore * total ||
            c.fill_ratio() < kObjectMinFill) {
            continue;
        }
        objects.push_back(i);
    }
    // A single region that fills the patch is the subject, not a backdrop.
    if (objects.empty() && background >= 0) {
        objects.push_back(background);
        background = -1;
    }

    Eigen::VectorXd sum = Eigen::VectorXd::Zero(config_.d_embed);
    if (background >= 0) sum += canonical_background(comps[background].cls);
    for (int i : objects) {
        const Component& c = comps[i];
        const auto q = shape_weights(c);
        Eigen::VectorXd v = Eigen::VectorXd::Zero(config_.d_embed);
        for (int s = 0; s < kNumShapes; ++s) v += q[s] * canonical_object(c.cls, s);
        sum += std::min(1.0, c.area / (kObjectFullWeightArea * total)) * unit(v);
    }
    if (sum.norm() == 0.0) return to_embedding(null_vector());
    return to_embedding(unit(sum));
}

std::string ToyEmbedder::id() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "toy-d%d-in%d-mis%.4fx%llu-sig%.4fx%llu-%s", config_.d_embed, config_.input_size,
                  config_.misalignment_strength, static_cast<unsigned long long>(config_.misalignment_seed),
                  config_.signature_scale, static_cast<unsigned long long>(config_.signature_seed),
                  to_string(config_.interpolation).c_str());
    return buf;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return dot / std::sqrt(na * nb);
}

EmbeddingVector to_embedding(const Eigen::VectorXd& v) {
    EmbeddingVector out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
    return out;
}

Eigen::VectorXd to_eigen(const EmbeddingVector& v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
    return out;
}

}  // namespace spatext
