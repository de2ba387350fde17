#include "spatext/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace spatext {
namespace fs = std::filesystem;

void ShapesConfig::validate() const {
    if (size < 8) throw ValidationError("shapes: canvas size must be at least 8");
    if (min_shapes < 1 || max_shapes < min_shapes || max_shapes >= kNumColors) {
        throw ValidationError("shapes: need 1 <= min_shapes <= max_shapes < number of colors");
    }
    if (!(min_area_fraction > 0 && min_area_fraction < 1) || !(max_side_fraction > 0 && max_side_fraction <= 1)) {
        throw ValidationError("shapes: area and side fractions must lie in (0, 1]");
    }
    if (gap < 0 || max_retries < 1) throw ValidationError("shapes: gap must be >= 0 and max_retries >= 1");
}

nlohmann::json ShapesConfig::to_json() const {
    return {{"size", size},           {"min_shapes", min_shapes}, {"max_shapes", max_shapes},
            {"min_area_fraction", min_area_fraction}, {"max_side_fraction", max_side_fraction},
            {"gap", gap},             {"max_retries", max_retries}};
}

std::string ShapeSegment::label() const {
    return std::string(kColorNames[color]) + " " + std::string(kShapeNames[static_cast<int>(shape)]);
}

std::vector<int> ShapesSample::label_map() const {
    std::vector<int> labels(static_cast<std::size_t>(image.height) * image.width, 0);
    for (std::size_t k = 0; k < segments.size(); ++k)
        for (std::size_t p = 0; p < labels.size(); ++p)
            if (segments[k].mask.bits[p]) labels[p] = static_cast<int>(k) + 1;
    return labels;
}

std::vector<std::string> ShapesSample::label_names() const {
    std::vector<std::string> names;
    for (const auto& s : segments) names.push_back(s.label());
    return names;
}

bool shape_contains(ShapeKind shape, double x0, double y0, double side, double px, double py) {
    switch (shape) {
        case ShapeKind::Square:
            return px >= x0 && px < x0 + side && py >= y0 && py < y0 + side;
        case ShapeKind::Circle: {
            const double r = side / 2.0, dx = px - (x0 + r), dy = py - (y0 + r);
            return dx * dx + dy * dy <= r * r;
        }
        case ShapeKind::Triangle: {
            if (py < y0 || py > y0 + side) return false;
            const double half_width = 0.5 * side * (py - y0) / side;
            return std::abs(px - (x0 + side / 2.0)) <= half_width;
        }
    }
    return false;
}

Mask rasterize_shape(ShapeKind shape, int x0, int y0, int side, int height, int width) {
    Mask m(height, width);
    for (int y = std::max(0, y0); y < std::min(height, y0 + side); ++y)
        for (int x = std::max(0, x0); x < std::min(width, x0 + side); ++x)
            if (shape_contains(shape, x0, y0, side, x + 0.5, y + 0.5)) m.set(y, x);
    return m;
}

std::string make_caption(int background, const std::vector<ShapeSegment>& segments) {
    std::string caption = "a " + std::string(kColorNames[background]) + " background";
    for (const auto& s : segments) caption += ", a " + s.label();
    return caption;
}

namespace {

// Occupied pixels grown by `gap` in every direction (Chebyshev).
void mark_occupied(std::vector<std::uint8_t>& occupied, const Mask& m, int gap) {
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            for (int dy = -gap; dy <= gap; ++dy)
                for (int dx = -gap; dx <= gap; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < m.height && xx >= 0 && xx < m.width) occupied[yy * m.width + xx] = 1;
                }
        }
}

std::optional<ShapesSample> try_gen(std::mt19937_64& rng, const ShapesConfig& cfg) {
    const int size = cfg.size;
    const double min_area = cfg.min_area_fraction * size * size;
    const int max_side = std::max(2, static_cast<int>(cfg.max_side_fraction * size));
    const int min_side = std::min(max_side, std::max(2, static_cast<int>(std::ceil(std::sqrt(min_area)))));

    ShapesSample sample;
    std::uniform_int_distribution<int> color_dist(0, kNumColors - 1);
    sample.background = color_dist(rng);
    std::vector<int> colors;
    for (int c = 0; c < kNumColors; ++c)
        if (c != sample.background) colors.push_back(c);
    std::shuffle(colors.begin(), colors.end(), rng);
    const int count = std::uniform_int_distribution<int>(cfg.min_shapes, cfg.max_shapes)(rng);

    std::vector<std::uint8_t> occupied(static_cast<std::size_t>(size) * size, 0);
    for (int k = 0; k < count; ++k) {
        const auto kind = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, kNumShapes - 1)(rng));
        bool placed = false;
        for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
            const int side = std::uniform_int_distribution<int>(min_side, max_side)(rng);
            const int x0 = std::uniform_int_distribution<int>(0, size - side)(rng);
            const int y0 = std::uniform_int_distribution<int>(0, size - side)(rng);
            Mask m = rasterize_shape(kind, x0, y0, side, size, size);
            if (static_cast<double>(m.count()) < min_area) continue;
            bool clash = false;
            for (std::size_t p = 0; p < m.bits.size() && !clash; ++p) clash = m.bits[p] && occupied[p];
            if (clash) continue;
            mark_occupied(occupied, m, cfg.gap);
            sample.segments.push_back({std::move(m), colors[k], kind});
            placed = true;
        }
        if (!placed) return std::nullopt;
    }

    sample.image = Image(size, size);
    const Rgb bg = palette_color(sample.background);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            sample.image.at(y, x, 0) = bg.r;
            sample.image.at(y, x, 1) = bg.g;
            sample.image.at(y, x, 2) = bg.b;
        }
    for (const auto& seg : sample.segments) {
        const Rgb c = palette_color(seg.color);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                if (seg.mask.at(y, x)) {
                    sample.image.at(y, x, 0) = c.r;
                    sample.image.at(y, x, 1) = c.g;
                    sample.image.at(y, x, 2) = c.b;
                }
    }
    sample.caption = make_caption(sample.background, sample.segments);
    return sample;
}

std::string sample_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", i);
    return buf;
}

}  // namespace

ShapesSample gen_shapes(std::mt19937_64& rng, const ShapesConfig& config) {
    config.validate();
    for (int attempt = 0; attempt < config.max_retries; ++attempt) {
        if (auto s = try_gen(rng, config)) return std::move(*s);
    }
    throw std::runtime_error("gen_shapes: could not place shapes after " + std::to_string(config.max_retries) +
                             " attempts; the configuration is too crowded");
}

Mask DenseSample::mask_of(int label) const {
    Mask m(height, width);
    for (std::size_t p = 0; p < labels.size(); ++p) m.bits[p] = labels[p] == label ? 1 : 0;
    return m;
}

std::string read_text_file(const fs::path& path) {
    if (!fs::exists(path)) throw ValidationError("file not found: " + path.string());
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

void write_dense_sample(const fs::path& root, const DenseSample& sample) {
    const fs::path dir = root / "samples" / sample.id;
    fs::create_directories(dir);
    write_png(dir / "image.png", sample.image);
    write_label_png(dir / "labels.png", sample.height, sample.width, sample.labels);
    std::string names;
    for (const auto& n : sample.label_names) names += n + "\n";
    write_text_file(dir / "labels.txt", names);
    write_text_file(dir / "caption.txt", sample.caption + "\n");
}

void write_manifest(const fs::path& root, const std::vector<std::pair<std::string, std::string>>& entries,
                    const nlohmann::json& meta) {
    nlohmann::json doc;
    doc["meta"] = meta;
    doc["samples"] = nlohmann::json::array();
    for (const auto& [id, split] : entries) doc["samples"].push_back({{"id", id}, {"split", split}});
    write_text_file(root / "manifest.json", doc.dump(1) + "\n");
}

int write_shapes_corpus(const fs::path& root, const CorpusSpec& spec) {
    spec.shapes.validate();
    if (spec.count < 1) throw ValidationError("corpus: count must be positive");
    if (!(spec.eval_fraction >= 0 && spec.eval_fraction < 1)) throw ValidationError("corpus: eval_fraction in [0, 1)");
    fs::create_directories(root / "samples");
    const int n_train = spec.count - static_cast<int>(std::lround(spec.eval_fraction * spec.count));
    std::vector<std::pair<std::string, std::string>> entries;
    for (int i = 0; i < spec.count; ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                          static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(seq);
        const ShapesSample s = gen_shapes(rng, spec.shapes);
        DenseSample d;
        d.id = sample_id(i);
        d.split = i < n_train ? "train" : "eval";
        d.image = s.image;
        d.height = s.image.height;
        d.width = s.image.width;
        d.labels = s.label_map();
        d.label_names = s.label_names();
        d.caption = s.caption;
        write_dense_sample(root, d);
        entries.emplace_back(d.id, d.split);
    }
    nlohmann::json meta = {{"generator", "shapes"}, {"seed", spec.seed}, {"shapes", spec.shapes.to_json()}};
    write_manifest(root, entries, meta);
    return spec.count;
}

CorpusIndex read_manifest(const fs::path& root) {
    CorpusIndex index;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(root / "manifest.json"));
        index.meta = doc.value("meta", nlohmann::json::object());
        for (const auto& e : doc.at("samples")) {
            index.entries.emplace_back(e.at("id").get<std::string>(), e.value("split", std::string("train")));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("corpus manifest " + (root / "manifest.json").string() + ": " + e.what());
    }
    return index;
}

DenseSample read_dense_sample(const fs::path& root, const std::string& id) {
    const fs::path dir = root / "samples" / id;
    DenseSample d;
    d.id = id;
    d.image = read_png(dir / "image.png");
    d.labels = read_label_png(dir / "labels.png", d.height, d.width);
    if (d.height != d.image.height || d.width != d.image.width) {
        throw ValidationError("sample " + id + ": label map and image differ in size");
    }
    std::istringstream names(read_text_file(dir / "labels.txt"));
    for (std::string line; std::getline(names, line);) {
        line = trim(line);
        if (!line.empty()) d.label_names.push_back(line);
    }
    d.caption = trim(read_text_file(dir / "caption.txt"));
    for (int v : d.labels) {
        if (v < 0 || v > static_cast<int>(d.label_names.size())) {
            throw ValidationError("sample " + id + ": label " + std::to_string(v) + " has no name");
        }
    }
    return d;
}

std::vector<DenseSample> read_corpus(const fs::path& root, const std::string& split, std::size_t limit) {
    const CorpusIndex index = read_manifest(root);
    std::vector<DenseSample> out;
    for (const auto& [id, s] : index.entries) {
        if (!split.empty() && s != split) continue;
        out.push_back(read_dense_sample(root, id));
        out.back().split = s;
        if (limit > 0 && out.size() >= limit) break;
    }
    return out;
}

SceneSpec SparseEvalInput::to_scene() const {
    SceneSpec scene;
    scene.global_prompt = global_prompt;
    scene.height = rst.height;
    scene.width = rst.width;
    for (int k = 1; k <= rst.segment_count(); ++k) scene.segments.push_back({rst.prompts[k - 1], rst.mask_of(k)});
    return scene;
}

nlohmann::json SparseEvalInput::to_json() const {
    nlohmann::json j = scene_to_json(to_scene());
    j["source_id"] = source_id;
    return j;
}

SparseEvalInput SparseEvalInput::from_json(const nlohmann::json& j) {
    SparseEvalInput in;
    const SceneSpec scene = scene_from_json(j);
    in.global_prompt = scene.global_prompt;
    in.rst = to_rst(scene);
    in.source_id = j.value("source_id", std::string());
    return in;
}

std::optional<SparseEvalInput> make_sparse_inputs(const std::vector<int>& labels, int height, int width,
                                                  const std::vector<std::string>& label_names,
                                                  const std::string& caption, std::mt19937_64& rng,
                                                  const std::string& source_id, const SparseInputConfig& config) {
    if (labels.size() != static_cast<std::size_t>(height) * width) {
        throw ValidationError("make_sparse_inputs: label grid does not match " + std::to_string(height) + "x" +
                              std::to_string(width));
    }
    std::vector<std::size_t> area(label_names.size() + 1, 0);
    for (int v : labels) {
        if (v < 0 || v > static_cast<int>(label_names.size())) {
            throw ValidationError("make_sparse_inputs: label " + std::to_string(v) + " has no name");
        }
        ++area[v];
    }
    std::vector<int> eligible;
    const double min_area = config.min_area_fraction * height * width;
    for (int k = 1; k <= static_cast<int>(label_names.size()); ++k)
        if (area[k] > 0 && static_cast<double>(area[k]) >= min_area) eligible.push_back(k);
    if (eligible.empty()) return std::nullopt;

    const int max_k = std::min<int>(config.max_segments, static_cast<int>(eligible.size()));
    const int k = std::uniform_int_distribution<int>(1, max_k)(rng);
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(k);

    SparseEvalInput out;
    out.global_prompt = caption;
    out.source_id = source_id;
    out.rst.height = height;
    out.rst.width = width;
    out.rst.labels.assign(labels.size(), 0);
    for (int i = 0; i < k; ++i) {
        const int src = eligible[i];
        for (std::size_t p = 0; p < labels.size(); ++p)
            if (labels[p] == src) out.rst.labels[p] = i + 1;
        out.rst.prompts.push_back("a " + label_names[src - 1]);
    }
    return out;
}

void write_inputs(const fs::path& path, const std::vector<SparseEvalInput>& inputs) {
    nlohmann::json doc;
    doc["inputs"] = nlohmann::json::array();
    for (const auto& in : inputs) doc["inputs"].push_back(in.to_json());
    write_text_file(path, doc.dump() + "\n");
}

std::vector<SparseEvalInput> read_inputs(const fs::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("inputs file " + path.string() + ": " + e.what());
    }
    if (!doc.contains("inputs") || !doc["inputs"].is_array()) {
        throw ValidationError("inputs file " + path.string() + ": missing \"inputs\" array");
    }
    std::vector<SparseEvalInput> out;
    for (const auto& j : doc["inputs"]) out.push_back(SparseEvalInput::from_json(j));
    return out;
}

EmbeddingPairs collect_prior_pairs(const std::vector<DenseSample>& samples, const Embedder& embedder) {
    EmbeddingPairs pairs;
    for (const DenseSample& s : samples) {
        for (int k = 1; k <= static_cast<int>(s.label_names.size()); ++k) {
            const Mask m = s.mask_of(k);
            if (m.count() == 0) continue;
            pairs.text.push_back(embedder.embed_text("a " + s.label_names[k - 1]));
            pairs.image.push_back(embedder.embed_image(embedder.preprocess(s.image, m)));
        }
        pairs.text.push_back(embedder.embed_text(s.caption));
        pairs.image.push_back(embedder.embed_frame(s.image));
    }
    return pairs;
}

}  // namespace spatext
