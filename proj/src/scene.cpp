#include "spatext/scene.hpp"

#include <charconv>
#include <sstream>

namespace spatext {
namespace {

constexpr int kMaxCanvas = 4096;

std::string segment_label(std::size_t i) { return "segment " + std::to_string(i); }

}  // namespace

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

Mask RawSpatioTextualMatrix::mask_of(int label) const {
    Mask m(height, width);
    for (std::size_t i = 0; i < labels.size(); ++i) m.bits[i] = labels[i] == label ? 1 : 0;
    return m;
}

std::string encode_rle(const Mask& mask) {
    std::ostringstream os;
    std::uint8_t current = 0;
    std::size_t run = 0;
    bool first = true;
    for (std::uint8_t b : mask.bits) {
        if (b == current) {
            ++run;
            continue;
        }
        os << (first ? "" : ",") << run;
        first = false;
        current = b;
        run = 1;
    }
    os << (first ? "" : ",") << run;
    return os.str();
}

Mask decode_rle(std::string_view rle, int height, int width) {
    Mask mask(height, width);
    const std::size_t total = mask.bits.size();
    std::size_t pos = 0;
    std::uint8_t value = 0;
    std::size_t i = 0;
    while (i <= rle.size()) {
        const std::size_t comma = std::min(rle.find(',', i), rle.size());
        const std::string token = trim(rle.substr(i, comma - i));
        std::size_t run = 0;
        const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), run);
        if (token.empty() || ec != std::errc() || ptr != token.data() + token.size()) {
            throw ValidationError("malformed scene document: bad run length '" + token + "' in mask_rle");
        }
        if (run > total - pos) throw ValidationError("mask shape mismatch: mask_rle covers more than H*W pixels");
        std::fill_n(mask.bits.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
        pos += run;
        value ^= 1;
        i = comma + 1;
    }
    if (pos != total) {
        throw ValidationError("mask shape mismatch: mask_rle covers " + std::to_string(pos) + " pixels, canvas has " +
                              std::to_string(total));
    }
    return mask;
}

Mask rasterize_polygon(const std::vector<Point>& polygon, int height, int width) {
    Mask mask(height, width);
    if (polygon.size() < 3) return mask;
    for (int y = 0; y < height; ++y) {
        const double py = y + 0.5;
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5;
            bool inside = false;
            for (std::size_t i = 0, j = polygon.size() - 1; i < polygon.size(); j = i++) {
                const Point& a = polygon[i];
                const Point& b = polygon[j];
                if ((a.y > py) != (b.y > py)) {
                    const double cross_x = a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y);
                    if (px < cross_x) inside = !inside;
                }
            }
            if (inside) mask.set(y, x);
        }
    }
    return mask;
}

void validate_scene(const SceneSpec& scene) {
    if (scene.height <= 0 || scene.width <= 0 || scene.height > kMaxCanvas || scene.width > kMaxCanvas) {
        throw ValidationError("malformed scene document: canvas must be positive and at most " +
                              std::to_string(kMaxCanvas));
    }
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(scene.height) * scene.width, 0);
    for (std::size_t i = 0; i < scene.segments.size(); ++i) {
        const SegmentSpec& seg = scene.segments[i];
        if (trim(seg.prompt).empty()) throw ValidationError("empty prompt in " + segment_label(i));
        if (seg.mask.height != scene.height || seg.mask.width != scene.width) {
            throw ValidationError("mask shape mismatch in " + segment_label(i));
        }
        if (seg.mask.count() == 0) throw ValidationError("empty mask in " + segment_label(i));
        for (std::size_t p = 0; p < covered.size(); ++p) {
            if (!seg.mask.bits[p]) continue;
            if (covered[p]) throw ValidationError("masks not disjoint (" + segment_label(i) + ")");
            covered[p] = 1;
        }
    }
}

SceneSpec scene_from_json(const nlohmann::json& doc) {
    using nlohmann::json;
    if (!doc.is_object()) throw ValidationError("malformed scene document: expected a JSON object");
    SceneSpec scene;
    try {
        const json& gp = doc.at("global_prompt");
        if (!gp.is_string()) throw ValidationError("malformed scene document: global_prompt must be a string");
        scene.global_prompt = trim(gp.get<std::string>());
        const json& canvas = doc.at("canvas");
        if (!canvas.is_array() || canvas.size() != 2 || !canvas[0].is_number_integer() ||
            !canvas[1].is_number_integer()) {
            throw ValidationError("malformed scene document: canvas must be [H, W]");
        }
        scene.height = canvas[0].get<int>();
        scene.width = canvas[1].get<int>();
        if (scene.height <= 0 || scene.width <= 0 || scene.height > kMaxCanvas || scene.width > kMaxCanvas) {
            throw ValidationError("malformed scene document: canvas must be positive and at most " +
                                  std::to_string(kMaxCanvas));
        }
        const json segments = doc.value("segments", json::array());
        if (!segments.is_array()) throw ValidationError("malformed scene document: segments must be an array");
        for (std::size_t i = 0; i < segments.size(); ++i) {
            const json& s = segments[i];
            if (!s.is_object() || !s.contains("prompt") || !s["prompt"].is_string()) {
                throw ValidationError("malformed scene document: " + segment_label(i) + " needs a string prompt");
            }
            SegmentSpec seg;
            seg.prompt = trim(s["prompt"].get<std::string>());
            const bool has_rle = s.contains("mask_rle");
            const bool has_poly = s.contains("polygon");
            if (has_rle == has_poly) {
                throw ValidationError("malformed scene document: " + segment_label(i) +
                                      " needs exactly one of mask_rle or polygon");
            }
            if (has_rle) {
                if (!s["mask_rle"].is_string()) {
                    throw ValidationError("malformed scene document: mask_rle must be a string");
                }
                seg.mask = decode_rle(s["mask_rle"].get<std::string>(), scene.height, scene.width);
            } else {
                std::vector<Point> poly;
                for (const json& p : s["polygon"]) {
                    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
                        throw ValidationError("malformed scene document: polygon vertices must be [x, y]");
                    }
                    poly.push_back({p[0].get<double>(), p[1].get<double>()});
                }
                if (poly.size() < 3) {
                    throw ValidationError("malformed scene document: polygon needs at least 3 vertices");
                }
                seg.mask = rasterize_polygon(poly, scene.height, scene.width);
            }
            scene.segments.push_back(std::move(seg));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed scene document: ") + e.what());
    }
    validate_scene(scene);
    return scene;
}

SceneSpec parse_scene(std::string_view document) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(document);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("malformed scene document: ") + e.what());
    }
    return scene_from_json(doc);
}

nlohmann::json scene_to_json(const SceneSpec& scene) {
    nlohmann::json doc;
    doc["global_prompt"] = scene.global_prompt;
    doc["canvas"] = {scene.height, scene.width};
    doc["segments"] = nlohmann::json::array();
    for (const auto& seg : scene.segments) {
        doc["segments"].push_back({{"prompt", seg.prompt}, {"mask_rle", encode_rle(seg.mask)}});
    }
    return doc;
}

std::string serialize_scene(const SceneSpec& scene) { return scene_to_json(scene).dump(); }

RawSpatioTextualMatrix to_rst(const SceneSpec& scene) {
    validate_scene(scene);
    RawSpatioTextualMatrix rst;
    rst.height = scene.height;
    rst.width = scene.width;
    rst.labels.assign(static_cast<std::size_t>(scene.height) * scene.width, 0);
    for (std::size_t k = 0; k < scene.segments.size(); ++k) {
        const Mask& m = scene.segments[k].mask;
        for (std::size_t p = 0; p < m.bits.size(); ++p)
            if (m.bits[p]) rst.labels[p] = static_cast<int>(k) + 1;
        rst.prompts.push_back(scene.segments[k].prompt);
    }
    return rst;
}

void validate_rst(const RawSpatioTextualMatrix& rst) {
    if (rst.height <= 0 || rst.width <= 0 || rst.labels.size() != static_cast<std::size_t>(rst.height) * rst.width) {
        throw ValidationError("raw spatio-textual matrix: label grid does not match its shape");
    }
    for (int v : rst.labels) {
        if (v < 0 || v > rst.segment_count()) {
            throw ValidationError("raw spatio-textual matrix: label " + std::to_string(v) + " has no prompt");
        }
    }
}

std::string concat_prompts(const std::string& global_prompt, const std::vector<std::string>& local_prompts) {
    std::string out = global_prompt;
    for (const auto& p : local_prompts) {
        if (!out.empty()) out += ", ";
        out += p;
    }
    return out;
}

std::string concat_prompts(const SceneSpec& scene) {
    std::vector<std::string> locals;
    for (const auto& s : scene.segments) locals.push_back(s.prompt);
    return concat_prompts(scene.global_prompt, locals);
}

}  // namespace spatext
