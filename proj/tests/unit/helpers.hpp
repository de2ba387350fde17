#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "spatext/checkpoint.hpp"
#include "spatext/data.hpp"
#include "spatext/denoiser.hpp"
#include "spatext/scene.hpp"
#include "spatext/tensor.hpp"

namespace spatext::test {

inline Tensor random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, float scale = 1.0f) {
    Tensor t(n, c, h, w);
    std::normal_distribution<float> d(0.0f, scale);
    for (float& v : t.values()) v = d(rng);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - b.data()[i]));
    return m;
}

// Small, untrained model bundle for plumbing tests.
inline ModelBundle tiny_bundle(int resolution = 16, CondKind cond = CondKind::SpatioTextual, std::uint64_t seed = 3,
                               int T = 50) {
    ModelBundle b;
    b.resolution = resolution;
    b.cond = cond;
    DenoiserConfig dc;
    dc.widths = {8, 8, 8};
    dc.embed_dim = 16;
    dc.text_dim = b.embedder.d_embed;
    b.denoiser = Denoiser(dc, seed);
    std::mt19937_64 rng(seed);
    b.denoiser = extend_input_channels(b.denoiser, cond == CondKind::Binary ? 1 : dc.text_dim, rng);
    b.schedule = make_schedule(T, ScheduleKind::Linear);
    return b;
}

inline Mask rect_mask(int h, int w, int y0, int x0, int y1, int x1) {
    Mask m(h, w);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.set(y, x);
    return m;
}

inline SceneSpec two_segment_scene(int size = 16) {
    SceneSpec s;
    s.height = s.width = size;
    s.global_prompt = "a white background";
    s.segments.push_back({"a red circle", rect_mask(size, size, 1, 1, size / 2, size / 2)});
    s.segments.push_back({"a blue square", rect_mask(size, size, size / 2, size / 2, size - 1, size - 1)});
    return s;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("spatext-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace spatext::test
