#pragma once

#include <random>
#include <vector>

#include "spatext/embed.hpp"
#include "spatext/image.hpp"
#include "spatext/scene.hpp"
#include "spatext/tensor.hpp"

namespace spatext {

class PriorModel;

// H x W x d map: one embedding per pixel inside a segment, zero elsewhere.
struct SpatioTextualTensor {
    int height = 0;
    int width = 0;
    int dim = 0;
    std::vector<float> data;  // row-major pixels, d values each

    SpatioTextualTensor() = default;
    SpatioTextualTensor(int h, int w, int d) : height(h), width(w), dim(d), data(static_cast<std::size_t>(h) * w * d, 0.0f) {}

    float* row(int y, int x) { return data.data() + (static_cast<std::size_t>(y) * width + x) * dim; }
    const float* row(int y, int x) const { return data.data() + (static_cast<std::size_t>(y) * width + x) * dim; }
    bool row_is_zero(int y, int x) const;
    bool operator==(const SpatioTextualTensor& o) const = default;

    // [1, d, H, W] for the denoiser.
    Tensor to_tensor() const;
};

// ST[j, k] = embed_image(preprocess_segment(image, S_i)) on S_i, zero elsewhere.
// Throws ValidationError on empty, mis-shaped or overlapping masks.
SpatioTextualTensor build_st_train(const Image& image, const std::vector<Mask>& segments, const Embedder& embedder);

// Same, with one precomputed vector per segment.
SpatioTextualTensor paint_segments(int height, int width, const std::vector<Mask>& segments,
                                   const std::vector<EmbeddingVector>& vectors);

// Drops segments under min_area_fraction of the canvas, then picks K uniformly
// from [1, min(max_k, eligible)] of the rest at random. Empty if none is eligible.
std::vector<Mask> select_training_segments(const std::vector<Mask>& all_segments, std::mt19937_64& rng,
                                           double min_area_fraction = 0.05, int max_k = 3);
// Same draw, as indices into all_segments.
std::vector<int> select_training_indices(const std::vector<Mask>& all_segments, std::mt19937_64& rng,
                                         double min_area_fraction = 0.05, int max_k = 3);

// Per segment: prior(embed_text(prompt)) when a prior is given, else embed_text(prompt).
SpatioTextualTensor build_st_infer(const RawSpatioTextualMatrix& rst, const Embedder& embedder,
                                   const PriorModel* prior);

// [1, 1, H, W]: 1 where a segment is assigned, else 0.
Tensor build_binary(const RawSpatioTextualMatrix& rst);

// Nearest-neighbour downsampling by an integer factor, sampling the centre
// pixel (y * f + f / 2) of each block. Throws ValidationError otherwise.
SpatioTextualTensor resample_st(const SpatioTextualTensor& st, int height, int width);
Tensor resample_nearest(const Tensor& map, int height, int width);

}  // namespace spatext
