// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.
//
//   spatext_acceptance [--work DIR] [--only 1,2,...] [--eval-steps N]
//
// Criteria 8-10 need two trained 32x32 pixel models. They are trained once
// into the work directory and reused while their configuration is unchanged.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "spatext/checkpoint.hpp"
#include "spatext/cli.hpp"
#include "spatext/data.hpp"
#include "spatext/eval.hpp"
#include "spatext/guidance.hpp"
#include "spatext/hash.hpp"
#include "spatext/losses.hpp"
#include "spatext/prior.hpp"
#include "spatext/repr.hpp"
#include "spatext/train.hpp"

using namespace spatext;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

Tensor normal_tensor(int n, int c, int h, int w, std::mt19937_64& rng) {
    std::normal_distribution<float> d;
    Tensor t(n, c, h, w);
    for (float& v : t.values()) v = d(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - b.data()[i]));
    return m;
}

// --- 1 ------------------------------------------------------------------------

Outcome guidance_algebra() {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> scale(0.0, 10.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Tensor u = normal_tensor(1, 3, 8, 8, rng), c = normal_tensor(1, 3, 8, 8, rng);
        const double s = scale(rng);
        const Tensor single = cfg_single(u, c, s);
        const std::vector<Tensor> one = {c};
        const std::vector<double> scales = {s};
        worst = std::max(worst, max_abs_diff(cfg_multi(u, one, scales), single));
        worst = std::max(worst, max_abs_diff(cfg_fast(u, c, s), single));
    }
    bool passes = true;
    for (int n = 1; n <= 4; ++n) {
        GuidanceSpec m;
        m.mode = GuidanceMode::Multi;
        m.scales.assign(n, 3.0);
        passes = passes && required_forward_passes(m, n) == n + 1;
        GuidanceSpec f = GuidanceSpec::fast(3.0);
        passes = passes && required_forward_passes(f, n) == 2;
    }
    return {worst <= 1e-12 && passes,
            fmt("1000 triples, max |diff| %.3g (tol 1e-12); forward passes N+1 / 2: %s", worst, passes ? "ok" : "wrong")};
}

// --- 2 ------------------------------------------------------------------------

// Random 8x8 instance with 0-3 disjoint segments.
void random_instance(std::mt19937_64& rng, Image& image, std::vector<Mask>& masks) {
    const int k = std::uniform_int_distribution<int>(0, 3)(rng);
    masks.clear();
    if (rng() % 2 == 0) {
        ShapesConfig cfg;
        cfg.size = 8;
        cfg.min_shapes = 1;
        cfg.max_shapes = 3;
        const ShapesSample s = gen_shapes(rng, cfg);
        image = s.image;
        for (std::size_t i = 0; i < s.segments.size() && int(i) < k; ++i) masks.push_back(s.segments[i].mask);
        return;
    }
    image = Image(8, 8);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : image.pixels) v = u(rng);
    std::vector<int> labels(64);
    for (int& l : labels) l = std::uniform_int_distribution<int>(0, k)(rng);
    for (int s = 1; s <= k; ++s) {
        Mask m(8, 8);
        for (int p = 0; p < 64; ++p) m.bits[p] = labels[p] == s;
        if (m.count() > 0) masks.push_back(m);
    }
}

Outcome st_oracle() {
    const ToyEmbedder e;
    std::mt19937_64 rng(202);
    int cases = 0, mismatches = 0;
    std::set<std::size_t> ks;
    for (int seed = 0; seed < 600; ++seed) {
        Image image;
        std::vector<Mask> masks;
        random_instance(rng, image, masks);
        ks.insert(masks.size());
        const SpatioTextualTensor st = build_st_train(image, masks, e);
        ++cases;
        bool same = st.height == 8 && st.width == 8 && st.dim == e.dim();
        for (int y = 0; y < 8 && same; ++y)
            for (int x = 0; x < 8 && same; ++x) {
                EmbeddingVector expect(e.dim(), 0.0f);
                for (const Mask& m : masks)
                    if (m.at(y, x)) expect = e.embed_image(preprocess_segment(image, m, e.input_size(), e.interpolation()));
                same = std::equal(expect.begin(), expect.end(), st.row(y, x));
            }
        mismatches += !same;
    }
    return {cases >= 500 && mismatches == 0 && ks.size() == 4,
            fmt("%d instances (K = 0..3 all present: %s), %d mismatches (exact equality)", cases,
                ks.size() == 4 ? "yes" : "no", mismatches)};
}

// --- 3 ------------------------------------------------------------------------

Outcome dropout_statistics() {
    std::mt19937_64 rng(303);
    const int n = 100000;
    int text = 0, spatial = 0, both = 0;
    for (int i = 0; i < n; ++i) {
        const DropoutDraw d = draw_dropout(0.1, rng);
        text += d.drop_text;
        spatial += d.drop_spatial;
        both += d.drop_text && d.drop_spatial;
    }
    const double t = text / double(n), s = spatial / double(n), b = both / double(n);
    const bool ok = t >= 0.095 && t <= 0.105 && s >= 0.095 && s <= 0.105 && b >= 0.008 && b <= 0.012;
    return {ok, fmt("text %.4f, spatial %.4f (want [0.095, 0.105]); joint %.4f (want [0.008, 0.012])", t, s, b)};
}

// --- 4 ------------------------------------------------------------------------

Outcome channel_extension() {
    DenoiserConfig dc;  // the 32x32 model's configuration
    const Denoiser base(dc, 404);
    std::mt19937_64 rng(404);
    const Denoiser ext = extend_input_channels(base, dc.text_dim, rng);
    const Tensor x = normal_tensor(4, 3, 32, 32, rng);
    const Tensor pre = base.input_layer().forward(x);
    const Tensor pre_ext = ext.input_layer().forward(concat_channels(x, Tensor(4, dc.text_dim, 32, 32)));
    const double diff = max_abs_diff(pre, pre_ext);

    const int in = dc.space_channels + dc.text_dim;
    double sum = 0.0, sq = 0.0;
    long count = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        std::mt19937_64 r(seed);
        const Denoiser e = extend_input_channels(base, dc.text_dim, r);
        const auto& w = e.input_layer().weight.value;
        for (int o = 0; o < dc.widths[0]; ++o)
            for (int ch = dc.space_channels; ch < in; ++ch)
                for (int j = 0; j < 9; ++j) {
                    const double v = w[(static_cast<std::size_t>(o) * in + ch) * 9 + j];
                    sum += v;
                    sq += v * v;
                    ++count;
                }
    }
    const double mean = sum / count, var = sq / count - mean * mean;
    const double expected = 2.0 / (in * 9);
    const double rel = std::abs(var - expected) / expected;
    return {diff <= 1e-6 && rel <= 0.2,
            fmt("zero-map pre-activation diff %.3g (tol 1e-6); new-slice variance %.5g vs He 2/fan_in %.5g (rel %.3f, tol "
                "0.2) over 1000 seeds",
                diff, var, expected, rel)};
}

// --- 5 ------------------------------------------------------------------------

// eps = a * x_t + b, var_interp = v.
class AffineStub : public NoisePredictor {
public:
    nn::Param a{std::vector<int>{1}}, b{std::vector<int>{1}}, v{std::vector<int>{1}};
    Tensor last_x;

    Prediction predict(const DenoiserInput& in) override {
        last_x = in.x_t;
        Prediction p;
        p.eps = Tensor(in.x_t.n(), in.x_t.c(), in.x_t.h(), in.x_t.w());
        for (std::size_t i = 0; i < p.eps.size(); ++i) p.eps.data()[i] = a.value[0] * in.x_t.data()[i] + b.value[0];
        p.var_interp = Tensor(in.x_t.n(), in.x_t.c(), in.x_t.h(), in.x_t.w(), v.value[0]);
        return p;
    }
    void backward(const Tensor& d_eps, const Tensor* d_var) override {
        for (std::size_t i = 0; i < d_eps.size(); ++i) {
            a.grad[0] += d_eps.data()[i] * last_x.data()[i];
            b.grad[0] += d_eps.data()[i];
        }
        if (d_var)
            for (float g : d_var->values()) v.grad[0] += g;
    }
    std::vector<nn::NamedParam> parameters() override { return {{"a", &a}, {"b", &b}, {"v", &v}}; }
    bool learns_variance() const override { return true; }
};

Outcome losses() {
    std::mt19937_64 rng(505);
    const NoiseSchedule sched = make_schedule(1000, ScheduleKind::Linear);
    DenoiserConfig dc;
    dc.widths = {8, 8, 8};
    dc.embed_dim = 16;
    Denoiser model = extend_input_channels(Denoiser(dc, 505), 16, rng);
    std::uniform_int_distribution<int> td(1, 1000);
    bool exact = true;
    for (int trial = 0; trial < 20; ++trial) {
        TrainingBatch b;
        b.x0 = normal_tensor(2, 3, 16, 16, rng);
        for (float& v : b.x0.values()) v = std::clamp(v * 0.5f, -1.0f, 1.0f);
        b.cond_map = normal_tensor(2, 16, 16, 16, rng);
        b.text = normal_tensor(2, 16, 1, 1, rng);
        b.text_null = {0, 1};
        b.t = {trial == 0 ? 1 : td(rng), td(rng)};
        b.eps = normal_tensor(2, 3, 16, 16, rng);
        const LossTerms h = loss_hybrid(model, b, sched, 0.001);
        exact = exact && h.total == h.simple + 0.001 * h.vlb && h.simple == loss_simple(model, b, sched) &&
                h.vlb == loss_vlb(model, b, sched);
    }

    TrainingBatch b;
    b.x0 = normal_tensor(2, 3, 4, 4, rng);
    for (float& v : b.x0.values()) v = std::clamp(v * 0.5f, -1.0f, 1.0f);
    b.text = Tensor(2, 4, 1, 1);
    b.text_null = {1, 1};
    b.t = {7, 300};
    b.eps = normal_tensor(2, 3, 4, 4, rng);
    AffineStub stub;
    stub.a.value[0] = 0.4f;
    stub.b.value[0] = -0.2f;
    stub.zero_grad();
    loss_simple(stub, b, sched, true);
    double worst = 0.0;
    for (nn::Param* p : {&stub.a, &stub.b}) {
        const float orig = p->value[0], h = 1e-2f;
        p->value[0] = orig + h;
        const double up = loss_simple(stub, b, sched);
        p->value[0] = orig - h;
        const double down = loss_simple(stub, b, sched);
        p->value[0] = orig;
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(p->grad[0] - fd) / std::abs(fd));
    }
    return {exact && worst < 1e-4,
            fmt("hybrid == simple + 0.001 * vlb bit-exact on 20 batches: %s; stub gradient rel. error %.3g (tol 1e-4)",
                exact ? "yes" : "no", worst)};
}

// --- 6 ------------------------------------------------------------------------

Outcome frechet() {
    std::mt19937_64 rng(606);
    std::normal_distribution<double> nd;
    const int d = 16;
    std::vector<EmbeddingVector> a, b;
    for (int i = 0; i < 500; ++i) {
        EmbeddingVector x(d), y(d);
        for (int k = 0; k < d; ++k) {
            x[k] = float(nd(rng));
            y[k] = float(0.7 * nd(rng) + 0.3 * x[k] + (k < 3 ? 0.5 : 0.0));
        }
        a.push_back(x);
        b.push_back(y);
    }
    const double same = frechet_distance(a, a);

    GaussianStats g0{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)};
    GaussianStats g1{Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Identity(1, 1)};
    const double one_d = frechet_distance(g0, g1);

    const GaussianStats sa = gaussian_stats(a), sb = gaussian_stats(b);
    const double base = frechet_distance(sa, sb);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd::Random(d, d));
    const Eigen::MatrixXd q = qr.householderQ();
    const GaussianStats ra{q * sa.mean, q * sa.cov * q.transpose()};
    const GaussianStats rb{q * sb.mean, q * sb.cov * q.transpose()};
    const double rotated = frechet_distance(ra, rb);
    const double rot_diff = std::abs(rotated - base);
    return {same <= 1e-8 && std::abs(one_d - 1.0) <= 1e-3 && rot_diff <= 1e-6,
            fmt("identical sets %.3g (tol 1e-8); 1-D N(0,1) vs N(1,1) %.6f (want 1 +- 1e-3); rotation |diff| %.3g (tol "
                "1e-6, FD %.4f)",
                same, one_d, rot_diff, base)};
}

// --- 7 ------------------------------------------------------------------------

std::vector<DenseSample> in_memory_corpus(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<DenseSample> out;
    for (int i = 0; i < n; ++i) {
        const ShapesSample s = gen_shapes(rng);
        DenseSample d;
        d.id = std::to_string(i);
        d.image = s.image;
        d.height = s.image.height;
        d.width = s.image.width;
        d.labels = s.label_map();
        d.label_names = s.label_names();
        d.caption = s.caption;
        out.push_back(std::move(d));
    }
    return out;
}

Outcome prior_recovery() {
    const ToyEmbedder e;
    const EmbeddingPairs pairs = collect_prior_pairs(in_memory_corpus(1000, 707), e);
    const PriorModel prior = train_prior(pairs.text, pairs.image);
    double worst = 1.0, worst_raw = 1.0;
    std::string worst_prompt;
    for (int c = 0; c < kNumColors; ++c) {
        const std::string color(kColorNames[c]);
        auto check = [&](const std::string& prompt, const Eigen::VectorXd& canon) {
            const EmbeddingVector t = e.embed_text(prompt);
            const double cos = cosine(apply_prior(prior, t), to_embedding(canon));
            worst_raw = std::min(worst_raw, cosine(t, to_embedding(canon)));
            if (cos < worst) {
                worst = cos;
                worst_prompt = prompt;
            }
        };
        for (int s = 0; s < kNumShapes; ++s)
            check("a " + color + " " + std::string(kShapeNames[s]), e.canonical_object(c, s));
        check("a " + color + " background", e.canonical_background(c));
    }
    return {worst >= 0.99, fmt("%d vocabulary prompts, min cosine %.5f at '%s' (want >= 0.99; %.3f without the prior)",
                               kNumColors * (kNumShapes + 1), worst, worst_prompt.c_str(), worst_raw)};
}

// --- 11 -----------------------------------------------------------------------

Outcome input_synthesis() {
    std::mt19937_64 rng(1111);
    std::mt19937_64 pick(1112);
    std::string names;
    for (auto c : kColorNames) names += (names.empty() ? "" : "|") + std::string(c);
    std::string shapes;
    for (auto s : kShapeNames) shapes += (shapes.empty() ? "" : "|") + std::string(s);
    const std::regex pattern("^a (" + names + ") (" + shapes + ")$");
    int conversions = 0, skipped = 0, bad_k = 0, small = 0, bad_prompt = 0, bad_mask = 0;
    std::map<int, int> k_hist;
    while (conversions < 10000) {
        const ShapesSample s = gen_shapes(rng);
        const std::vector<int> labels = s.label_map();
        const std::vector<std::string> label_names = s.label_names();
        const auto in = make_sparse_inputs(labels, 32, 32, label_names, s.caption, pick);
        if (!in) {
            ++skipped;
            continue;
        }
        ++conversions;
        const int k = in->rst.segment_count();
        k_hist[k]++;
        bad_k += k < 1 || k > 3;
        for (int j = 1; j <= k; ++j) {
            const Mask m = in->rst.mask_of(j);
            small += double(m.count()) < 0.05 * 32 * 32;
            const std::string& prompt = in->rst.prompts[j - 1];
            bad_prompt += !std::regex_match(prompt, pattern);
            // The prompt names the dense label the mask came from.
            bool found = false;
            for (std::size_t l = 0; l < label_names.size(); ++l) {
                Mask src(32, 32);
                for (int p = 0; p < 32 * 32; ++p) src.bits[p] = labels[p] == int(l) + 1;
                if (src == m && prompt == "a " + label_names[l]) found = true;
            }
            bad_mask += !found;
        }
    }
    return {bad_k == 0 && small == 0 && bad_prompt == 0 && bad_mask == 0,
            fmt("%d conversions (%d skipped), K histogram {1: %d, 2: %d, 3: %d}; bad K %d, segments under 5%% %d, "
                "prompts not 'a {label}' %d, mask/label mismatches %d",
                conversions, skipped, k_hist[1], k_hist[2], k_hist[3], bad_k, small, bad_prompt, bad_mask)};
}

// --- trained-model fixture ------------------------------------------------------

struct Fixture {
    fs::path work;
    int eval_steps = 50;
    CorpusSpec corpus;
    TrainConfig train;
    int n_inputs = 200;
    std::uint64_t input_seed = 5;

    bool ready = false;
    std::vector<DenseSample> eval_samples;
    std::vector<SparseEvalInput> inputs;
    ModelBundle full, binary;
    fs::path full_path, binary_path;

    Fixture() {
        corpus.count = 5600;
        corpus.eval_fraction = 0.1;
        corpus.seed = 1;
        train.steps = 4000;
        train.learning_rate = 3e-4;
        train.seed = 0;
        train.log_every = 250;
    }

    void log(const std::string& s) const {
        std::fprintf(stderr, "[fixture] %s\n", s.c_str());
        std::fflush(stderr);
    }

    fs::path corpus_dir() const { return work / "corpus"; }

    void ensure_corpus() {
        bool fresh = false;
        if (fs::exists(corpus_dir() / "manifest.json")) {
            const CorpusIndex idx = read_manifest(corpus_dir());
            fresh = int(idx.entries.size()) == corpus.count && idx.meta.value("seed", std::uint64_t(0)) == corpus.seed;
        }
        if (fresh) return;
        log(fmt("writing %d-sample corpus", corpus.count));
        fs::remove_all(corpus_dir());
        write_shapes_corpus(corpus_dir(), corpus);
    }

    ModelBundle ensure_model(CondKind cond, const std::vector<TrainExample>& examples, const PriorModel& prior,
                             fs::path& path) {
        TrainConfig c = train;
        c.cond = cond;
        const nlohmann::json key = {{"train", c.to_json()},
                                    {"corpus_seed", corpus.seed},
                                    {"corpus_count", corpus.count},
                                    {"prior", prior.fingerprint()}};
        path = work / ("model-" + to_string(cond) + "-" + hex64(fnv1a(key.dump())) + ".ckpt");
        if (fs::exists(path)) {
            log("reusing " + path.string());
            return load_checkpoint(path);
        }
        log(fmt("training %s model: %ld steps, batch %d, lr %g on %zu samples", to_string(cond).c_str(), c.steps,
                c.batch, c.effective_learning_rate(), examples.size()));
        const auto t0 = Clock::now();
        const TrainResult r = train_model(examples, c, prior, [&](const TrainLog& l) {
            log(fmt("  %s step %ld loss %.4f (%.0fs)", to_string(cond).c_str(), l.step, l.loss, seconds_since(t0)));
        });
        save_checkpoint(path, r.bundle);
        log(fmt("trained in %.0fs", seconds_since(t0)));
        return r.bundle;
    }

    void prepare() {
        if (ready) return;
        fs::create_directories(work);
        ensure_corpus();
        const std::vector<DenseSample> train_samples = read_corpus(corpus_dir(), "train");
        eval_samples = read_corpus(corpus_dir(), "eval");
        const ToyEmbedder e(train.embedder);
        const EmbeddingPairs pairs = collect_prior_pairs(train_samples, e);
        const PriorModel prior = train_prior(pairs.text, pairs.image);
        log(fmt("prior trained on %zu pairs", pairs.text.size()));
        const std::vector<TrainExample> examples = prepare_examples(train_samples, e);
        full = ensure_model(CondKind::SpatioTextual, examples, prior, full_path);
        binary = ensure_model(CondKind::Binary, examples, prior, binary_path);

        std::mt19937_64 rng(input_seed);
        for (const DenseSample& s : eval_samples) {
            if (int(inputs.size()) == n_inputs) break;
            if (auto in = make_sparse_inputs(s.labels, s.height, s.width, s.label_names, s.caption, rng, s.id))
                inputs.push_back(*in);
        }
        ready = true;
    }

    EvalReport run(const ModelBundle& b, const std::vector<SparseEvalInput>& in, const GuidanceSpec& g,
                   const std::string& label) const {
        EvalConfig ec;
        ec.generation.guidance = g;
        ec.generation.steps = eval_steps;
        ec.seed = 77;
        ec.label = label;
        const auto t0 = Clock::now();
        EvalReport r = evaluate(b, in, ec);
        log(fmt("%-28s n_ok %3d  global %.4f  local %.4f  iou %.4f  (%.0fs)", label.c_str(), r.n_ok,
                r.mean_global_distance, r.mean_local_distance, r.mean_local_iou, seconds_since(t0)));
        std::ofstream(work / ("report-" + label + ".json")) << r.to_json().dump(2);
        return r;
    }
};

// --- 8 ------------------------------------------------------------------------

Outcome steering(Fixture& fx) {
    fx.prepare();
    const EvalReport both = fx.run(fx.full, fx.inputs, GuidanceSpec::multi(3, 3), "multi-3-3");
    const EvalReport no_local = fx.run(fx.full, fx.inputs, GuidanceSpec::multi(3, 0), "multi-3-0");
    const EvalReport no_global = fx.run(fx.full, fx.inputs, GuidanceSpec::multi(0, 3), "multi-0-3");
    const double margin = both.mean_local_iou - no_local.mean_local_iou;
    const bool all_ok = both.n_ok == int(fx.inputs.size()) && no_local.n_ok == both.n_ok && no_global.n_ok == both.n_ok;
    const bool ok = fx.inputs.size() >= 200 && all_ok && margin >= 0.15 &&
                    both.mean_global_distance < no_global.mean_global_distance;
    return {ok, fmt("%zu inputs, %d DDIM steps: local IOU (3,3) %.4f vs (3,0) %.4f, margin %.4f (want >= 0.15); "
                    "global distance s_g=3 %.4f vs s_g=0 %.4f (want lower)",
                    fx.inputs.size(), fx.eval_steps, both.mean_local_iou, no_local.mean_local_iou, margin,
                    both.mean_global_distance, no_global.mean_global_distance)};
}

// --- 9 ------------------------------------------------------------------------

Outcome binary_ablation(Fixture& fx) {
    fx.prepare();
    const GuidanceSpec g = GuidanceSpec::fast(3.0);
    const EvalReport full = fx.run(fx.full, fx.inputs, g, "full-fast3");
    const EvalReport bin = fx.run(fx.binary, fx.inputs, g, "binary-fast3");
    std::vector<SparseEvalInput> exchanged;
    for (const auto& in : fx.inputs)
        if (in.rst.segment_count() >= 2) exchanged.push_back(exchange_prompts(in));
    const EvalReport full_x = fx.run(fx.full, exchanged, g, "full-exchange");
    const EvalReport bin_x = fx.run(fx.binary, exchanged, g, "binary-exchange");
    const bool ok = !exchanged.empty() && full_x.n_ok == int(exchanged.size()) && bin_x.n_ok == full_x.n_ok &&
                    full_x.mean_local_distance < bin_x.mean_local_distance;
    return {ok, fmt("local IOU full %.4f, binary %.4f (reported); color exchange on %zu inputs: local distance full "
                    "%.4f vs binary %.4f (want full lower)",
                    full.mean_local_iou, bin.mean_local_iou, exchanged.size(), full_x.mean_local_distance,
                    bin_x.mean_local_distance)};
}

// --- 10 -----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

Outcome determinism(Fixture& fx) {
    fx.prepare();
    const fs::path scene = fx.work / "determinism-scene.json";
    write_text_file(scene, serialize_scene(fx.inputs.front().to_scene()));
    int codes = 0;
    for (const char* name : {"determinism-a.png", "determinism-b.png"}) {
        fs::remove(fx.work / name);
        codes += run_cli({"generate", "--scene", scene.string(), "--checkpoint", fx.full_path.string(), "--out",
                          (fx.work / name).string(), "--seed", "1234"});
    }
    const std::string a = slurp(fx.work / "determinism-a.png"), b = slurp(fx.work / "determinism-b.png");
    return {codes == 0 && !a.empty() && a == b,
            fmt("two generate runs, seed 1234, %d DDIM steps: exit codes %s, %zu vs %zu bytes, identical: %s",
                fx.full.default_sampling_steps(), codes == 0 ? "0" : "non-zero", a.size(), b.size(),
                a == b ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria for the spatext build"};
    std::string work = "acceptance_work";
    std::vector<int> only;
    Fixture fx;
    app.add_option("--work", work, "Directory for the corpus, checkpoints and reports")->capture_default_str();
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    app.add_option("--eval-steps", fx.eval_steps, "DDIM steps for the evaluation criteria")->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    fx.work = work;

    struct Criterion {
        int id;
        const char* name;
        double budget_s;  // 0: no runtime bound
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "guidance algebra", 1, guidance_algebra},
        {2, "spatio-textual oracle", 10, st_oracle},
        {3, "dropout statistics", 5, dropout_statistics},
        {4, "channel extension", 30, channel_extension},
        {5, "losses", 10, losses},
        {6, "frechet metric", 5, frechet},
        {7, "prior recovery", 30, prior_recovery},
        {8, "end-to-end steering", 0, [&] { return steering(fx); }},
        {9, "binary ablation", 0, [&] { return binary_ablation(fx); }},
        {10, "determinism", 60, [&] { return determinism(fx); }},
        {11, "input synthesis", 30, input_synthesis},
    };

    int failed = 0;
    for (const Criterion& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double dt = seconds_since(t0);
        std::string timing = fmt("%.2fs", dt);
        if (c.budget_s > 0) {
            timing += fmt(" (limit %.0fs)", c.budget_s);
            if (dt > c.budget_s) {
                o.pass = false;
                o.detail += "; over the runtime limit";
            }
        }
        failed += !o.pass;
        std::printf("%s %2d %s: %s [%s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), timing.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
