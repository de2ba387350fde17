#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spatext/image.hpp"

namespace spatext {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// One user segment: a free-form local prompt and its mask.
struct SegmentSpec {
    std::string prompt;
    Mask mask;
};

// Global prompt plus pairwise-disjoint segments on an H x W canvas.
struct SceneSpec {
    std::string global_prompt;
    std::vector<SegmentSpec> segments;
    int height = 0;
    int width = 0;
};

// Label grid: 0 is unassigned, k > 0 is segment k with prompt prompts[k-1].
struct RawSpatioTextualMatrix {
    int height = 0;
    int width = 0;
    std::vector<int> labels;
    std::vector<std::string> prompts;

    int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    int segment_count() const { return static_cast<int>(prompts.size()); }
    Mask mask_of(int label) const;
};

// Parses and validates a scene document:
//   {"global_prompt": str, "canvas": [H, W],
//    "segments": [{"prompt": str, "mask_rle": str} | {"prompt": str, "polygon": [[x, y], ...]}]}
// Throws ValidationError on malformed input, empty prompts, shape mismatches or overlapping masks.
SceneSpec parse_scene(std::string_view document);
SceneSpec scene_from_json(const nlohmann::json& doc);

// Serializes with run-length encoded masks.
nlohmann::json scene_to_json(const SceneSpec& scene);
std::string serialize_scene(const SceneSpec& scene);

void validate_scene(const SceneSpec& scene);

RawSpatioTextualMatrix to_rst(const SceneSpec& scene);
void validate_rst(const RawSpatioTextualMatrix& rst);

// Global prompt followed by every local prompt, joined with ", ".
std::string concat_prompts(const SceneSpec& scene);
std::string concat_prompts(const std::string& global_prompt, const std::vector<std::string>& local_prompts);

// Row-major alternating 0/1 run lengths starting with a 0-run, comma-separated.
std::string encode_rle(const Mask& mask);
Mask decode_rle(std::string_view rle, int height, int width);

// Even-odd fill evaluated at pixel centers (x + 0.5, y + 0.5).
Mask rasterize_polygon(const std::vector<Point>& polygon, int height, int width);

std::string trim(std::string_view s);

}  // namespace spatext
