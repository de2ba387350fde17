#include "spatext/repr.hpp"

#include <algorithm>

#include "spatext/prior.hpp"

namespace spatext {

bool SpatioTextualTensor::row_is_zero(int y, int x) const {
    const float* r = row(y, x);
    return std::all_of(r, r + dim, [](float v) { return v == 0.0f; });
}

Tensor SpatioTextualTensor::to_tensor() const {
    Tensor t(1, dim, height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const float* r = row(y, x);
            for (int c = 0; c < dim; ++c) t.at(0, c, y, x) = r[c];
        }
    return t;
}

SpatioTextualTensor paint_segments(int height, int width, const std::vector<Mask>& segments,
                                   const std::vector<EmbeddingVector>& vectors) {
    if (segments.size() != vectors.size()) throw std::invalid_argument("paint_segments: one vector per segment");
    const int d = vectors.empty() ? 0 : static_cast<int>(vectors.front().size());
    SpatioTextualTensor st(height, width, d);
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(height) * width, 0);
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const Mask& m = segments[i];
        if (m.height != height || m.width != width) {
            throw ValidationError("segment " + std::to_string(i) + ": mask shape does not match the canvas");
        }
        if (m.count() == 0) throw ValidationError("segment " + std::to_string(i) + ": empty mask");
        if (static_cast<int>(vectors[i].size()) != d) throw std::invalid_argument("paint_segments: ragged vectors");
        for (std::size_t p = 0; p < m.bits.size(); ++p) {
            if (!m.bits[p]) continue;
            if (covered[p]) throw ValidationError("masks not disjoint (segment " + std::to_string(i) + ")");
            covered[p] = 1;
            std::copy(vectors[i].begin(), vectors[i].end(), st.data.begin() + static_cast<std::ptrdiff_t>(p * d));
        }
    }
    return st;
}

SpatioTextualTensor build_st_train(const Image& image, const std::vector<Mask>& segments, const Embedder& embedder) {
    std::vector<EmbeddingVector> vectors;
    for (const Mask& m : segments) vectors.push_back(embedder.embed_image(embedder.preprocess(image, m)));
    SpatioTextualTensor st = paint_segments(image.height, image.width, segments, vectors);
    st.dim = embedder.dim();
    st.data.resize(static_cast<std::size_t>(image.height) * image.width * st.dim, 0.0f);
    return st;
}

std::vector<int> select_training_indices(const std::vector<Mask>& all_segments, std::mt19937_64& rng,
                                         double min_area_fraction, int max_k) {
    std::vector<int> eligible;
    for (int i = 0; i < static_cast<int>(all_segments.size()); ++i) {
        const Mask& m = all_segments[i];
        const double canvas = static_cast<double>(m.height) * m.width;
        const auto area = static_cast<double>(m.count());
        if (area > 0 && area >= min_area_fraction * canvas) eligible.push_back(i);
    }
    if (eligible.empty() || max_k < 1) return {};
    const int k = std::uniform_int_distribution<int>(1, std::min<int>(max_k, static_cast<int>(eligible.size())))(rng);
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(k);
    return eligible;
}

std::vector<Mask> select_training_segments(const std::vector<Mask>& all_segments, std::mt19937_64& rng,
                                           double min_area_fraction, int max_k) {
    std::vector<Mask> out;
    for (int i : select_training_indices(all_segments, rng, min_area_fraction, max_k)) out.push_back(all_segments[i]);
    return out;
}

SpatioTextualTensor build_st_infer(const RawSpatioTextualMatrix& rst, const Embedder& embedder,
                                   const PriorModel* prior) {
    validate_rst(rst);
    std::vector<Mask> masks;
    std::vector<EmbeddingVector> vectors;
    for (int k = 1; k <= rst.segment_count(); ++k) {
        EmbeddingVector v = embedder.embed_text(rst.prompts[k - 1]);
        if (prior != nullptr) v = apply_prior(*prior, v);
        Mask m = rst.mask_of(k);
        // A prompt whose label was fully painted over contributes nothing.
        if (m.count() == 0) continue;
        masks.push_back(std::move(m));
        vectors.push_back(std::move(v));
    }
    SpatioTextualTensor st = paint_segments(rst.height, rst.width, masks, vectors);
    st.dim = embedder.dim();
    st.data.resize(static_cast<std::size_t>(rst.height) * rst.width * st.dim, 0.0f);
    return st;
}

Tensor build_binary(const RawSpatioTextualMatrix& rst) {
    validate_rst(rst);
    Tensor b(1, 1, rst.height, rst.width);
    for (int y = 0; y < rst.height; ++y)
        for (int x = 0; x < rst.width; ++x) b.at(0, 0, y, x) = rst.at(y, x) > 0 ? 1.0f : 0.0f;
    return b;
}

namespace {

void check_factor(int src_h, int src_w, int h, int w) {
    if (h <= 0 || w <= 0 || src_h % h != 0 || src_w % w != 0) {
        throw ValidationError("resample: target " + std::to_string(h) + "x" + std::to_string(w) +
                              " does not evenly divide " + std::to_string(src_h) + "x" + std::to_string(src_w));
    }
}

}  // namespace

SpatioTextualTensor resample_st(const SpatioTextualTensor& st, int height, int width) {
    check_factor(st.height, st.width, height, width);
    const int fy = st.height / height, fx = st.width / width;
    SpatioTextualTensor out(height, width, st.dim);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const float* src = st.row(y * fy + fy / 2, x * fx + fx / 2);
            std::copy(src, src + st.dim, out.row(y, x));
        }
    return out;
}

Tensor resample_nearest(const Tensor& map, int height, int width) {
    check_factor(map.h(), map.w(), height, width);
    const int fy = map.h() / height, fx = map.w() / width;
    Tensor out(map.n(), map.c(), height, width);
    for (int n = 0; n < map.n(); ++n)
        for (int c = 0; c < map.c(); ++c)
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x) out.at(n, c, y, x) = map.at(n, c, y * fy + fy / 2, x * fx + fx / 2);
    return out;
}

}  // namespace spatext
