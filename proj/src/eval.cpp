#include "spatext/eval.hpp"

#include <cmath>

#include "spatext/hash.hpp"

namespace spatext {

double global_distance(const Image& image, std::string_view global_prompt, const Embedder& embedder) {
    return 1.0 - cosine(embedder.embed_text(global_prompt), embedder.embed_frame(image));
}

double local_distance(const Image& image, const RawSpatioTextualMatrix& rst, const Embedder& embedder) {
    validate_rst(rst);
    double sum = 0.0;
    int n = 0;
    for (int k = 1; k <= rst.segment_count(); ++k) {
        const Mask m = rst.mask_of(k);
        if (m.count() == 0) continue;
        sum += 1.0 - cosine(embedder.embed_image(embedder.preprocess(image, m)), embedder.embed_text(rst.prompts[k - 1]));
        ++n;
    }
    if (n == 0) throw ValidationError("local distance needs at least one segment");
    return sum / n;
}

Mask PaletteSegmenter::predict(const Image& image, std::string_view prompt) const {
    const std::vector<PromptClause> clauses = parse_toy_prompt(prompt);
    if (clauses.size() != 1 || clauses.front().background) {
        throw ValidationError("segmenter expects a single object prompt, got '" + std::string(prompt) + "'");
    }
    const int color = clauses.front().color;
    const int h = image.height, w = image.width;
    std::vector<int> classes(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            classes[static_cast<std::size_t>(y) * w + x] =
                nearest_palette(image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2), false);
    Mask out(h, w);
    const double min_area = min_fraction_ * h * w;
    for (const Component& c : connected_components(classes, h, w)) {
        if (c.cls != color || static_cast<double>(c.area) < min_area) continue;
        for (int p : c.pixels) out.bits[p] = 1;
    }
    return out;
}

double mask_iou(const Mask& a, const Mask& b) {
    if (!a.same_shape(b)) throw ValidationError("mask_iou: shape mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] && b.bits[i];
        uni += a.bits[i] || b.bits[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double local_iou(const Image& image, const RawSpatioTextualMatrix& rst, const Segmenter& segmenter) {
    validate_rst(rst);
    double sum = 0.0;
    int n = 0;
    for (int k = 1; k <= rst.segment_count(); ++k) {
        const Mask m = rst.mask_of(k);
        if (m.count() == 0) continue;
        sum += mask_iou(segmenter.predict(image, rst.prompts[k - 1]), m);
        ++n;
    }
    if (n == 0) throw ValidationError("local IOU needs at least one segment");
    return sum / n;
}

GaussianStats gaussian_stats(const std::vector<EmbeddingVector>& features) {
    if (features.empty()) throw ValidationError("no features");
    const int d = static_cast<int>(features.front().size());
    const int n = static_cast<int>(features.size());
    if (n < d + 1) {
        throw ValidationError("Frechet distance needs at least d + 1 = " + std::to_string(d + 1) + " samples, got " +
                              std::to_string(n));
    }
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(features[i].size()) != d) throw ValidationError("ragged feature vectors");
        for (int j = 0; j < d; ++j) x(i, j) = features[i][j];
    }
    GaussianStats s;
    s.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
    s.cov = centered.transpose() * centered / static_cast<double>(n - 1);
    return s;
}

namespace {

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b, double eps) {
    if (a.mean.size() != b.mean.size()) throw ValidationError("Frechet distance: dimension mismatch");
    const Eigen::Index d = a.mean.size();
    const Eigen::MatrixXd sa = a.cov + eps * Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd sb = b.cov + eps * Eigen::MatrixXd::Identity(d, d);
    // tr((Sa Sb)^{1/2}) = tr((Sa^{1/2} Sb Sa^{1/2})^{1/2}); the inner matrix is
    // symmetric PSD, so only round-off can make an eigenvalue negative.
    const Eigen::MatrixXd ra = sqrt_psd(sa);
    Eigen::MatrixXd inner = ra * sb * ra;
    inner = 0.5 * (inner + inner.transpose());
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(inner, Eigen::EigenvaluesOnly).eigenvalues();
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < 0.0) {
            if (std::sqrt(-ev(i)) >= 1e-3) throw std::runtime_error("Frechet distance: imaginary component too large");
            continue;
        }
        tr_sqrt += std::sqrt(ev(i));
    }
    const double value = (a.mean - b.mean).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, value);
}

double frechet_distance(const std::vector<EmbeddingVector>& a, const std::vector<EmbeddingVector>& b, double eps) {
    return frechet_distance(gaussian_stats(a), gaussian_stats(b), eps);
}

ToyEmbedderConfig metric_embedder_config(const ToyEmbedderConfig& model_config) {
    ToyEmbedderConfig c = model_config;
    c.misalignment_strength = 0.0;
    return c;
}

SparseEvalInput exchange_prompts(const SparseEvalInput& input) {
    SparseEvalInput out = input;
    const std::size_t n = out.rst.prompts.size();
    for (std::size_t k = 0; k < n; ++k) out.rst.prompts[(k + 1) % n] = input.rst.prompts[k];
    return out;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json recs = nlohmann::json::array();
    for (const EvalRecord& r : records) {
        nlohmann::json j = {{"id", r.id}, {"source_id", r.source_id}, {"segments", r.segments}};
        if (r.ok()) {
            j["global_distance"] = r.global_distance;
            j["local_distance"] = r.local_distance;
            j["local_iou"] = r.local_iou;
        } else {
            j["error"] = r.error;
        }
        recs.push_back(std::move(j));
    }
    return {{"config_fingerprint", config_fingerprint},
            {"label", label},
            {"n", records.size()},
            {"n_ok", n_ok},
            {"aggregates",
             {{"global_distance", mean_global_distance},
              {"local_distance", mean_local_distance},
              {"local_iou", mean_local_iou},
              {"frechet_distance", frechet ? nlohmann::json(*frechet) : nlohmann::json(nullptr)}}},
            {"records", std::move(recs)}};
}

void finalize_report(EvalReport& report) {
    double g = 0.0, l = 0.0, iou = 0.0;
    int n = 0;
    for (const EvalRecord& r : report.records) {
        if (!r.ok()) continue;
        g += r.global_distance;
        l += r.local_distance;
        iou += r.local_iou;
        ++n;
    }
    report.n_ok = n;
    report.mean_global_distance = n ? g / n : 0.0;
    report.mean_local_distance = n ? l / n : 0.0;
    report.mean_local_iou = n ? iou / n : 0.0;
}

EvalReport evaluate(const ModelBundle& bundle, const std::vector<SparseEvalInput>& inputs, const EvalConfig& config,
                    const std::vector<Image>& reference, std::vector<Image>* generated) {
    if (inputs.empty()) throw ValidationError("evaluation needs at least one input");
    const ToyEmbedder model_embedder(bundle.embedder);
    const ToyEmbedder metric(metric_embedder_config(bundle.embedder));
    const PaletteSegmenter segmenter;

    EvalReport report;
    report.label = config.label;
    const auto& g = config.generation;
    nlohmann::json fp = {{"checkpoint", bundle.fingerprint()},
                         {"mode", to_string(g.guidance.mode)},
                         {"scales", g.guidance.scales},
                         {"steps", g.steps},
                         {"use_prior", g.use_prior},
                         {"concat_prompts", g.concat_prompts},
                         {"seed", config.seed},
                         {"metric_embedder", metric.id()},
                         {"n", inputs.size()}};
    report.config_fingerprint = "eval-" + hex64(fnv1a(fp.dump()));
    report.records.resize(inputs.size());

    std::vector<ConditionSet> conds;
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> index;  // position in inputs of each prepared condition
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        EvalRecord& r = report.records[i];
        char id[16];
        std::snprintf(id, sizeof(id), "%06zu", i);
        r.id = id;
        r.source_id = inputs[i].source_id;
        r.segments = inputs[i].rst.segment_count();
        try {
            conds.push_back(prepare_conditions(bundle, model_embedder, inputs[i].to_scene(), g));
            seeds.push_back(derive_seed(config.seed, i));
            index.push_back(i);
        } catch (const std::exception& e) {
            r.error = e.what();
        }
    }
    std::vector<Image> images;
    if (!conds.empty()) images = generate_from_conditions(bundle, conds, seeds, g, config.batch);

    std::vector<EmbeddingVector> features;
    for (std::size_t j = 0; j < images.size(); ++j) {
        EvalRecord& r = report.records[index[j]];
        const SparseEvalInput& in = inputs[index[j]];
        // Score what a PNG on disk would hold.
        const Image img = quantize(images[j]);
        try {
            r.global_distance = global_distance(img, in.global_prompt, metric);
            r.local_distance = local_distance(img, in.rst, metric);
            r.local_iou = local_iou(img, in.rst, segmenter);
            features.push_back(metric.embed_frame(img));
        } catch (const std::exception& e) {
            r.error = e.what();
        }
    }
    finalize_report(report);

    const auto need = static_cast<std::size_t>(metric.dim()) + 1;
    if (features.size() >= need && reference.size() >= need) {
        std::vector<EmbeddingVector> ref;
        ref.reserve(reference.size());
        for (const Image& im : reference) ref.push_back(metric.embed_frame(im));
        report.frechet = frechet_distance(features, ref);
    }
    if (generated) {
        generated->assign(inputs.size(), Image());
        for (std::size_t j = 0; j < images.size(); ++j) (*generated)[index[j]] = std::move(images[j]);
    }
    return report;
}

}  // namespace spatext
