#include "spatext/cli.hpp"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "spatext/checkpoint.hpp"
#include "spatext/data.hpp"
#include "spatext/eval.hpp"
#include "spatext/pipeline.hpp"
#include "spatext/prior.hpp"
#include "spatext/service.hpp"
#include "spatext/train.hpp"

namespace spatext {
namespace {

namespace fs = std::filesystem;

struct EmbedderFlags {
    ToyEmbedderConfig config;
    std::string interpolation = "bilinear";

    void add(CLI::App* cmd) {
        cmd->add_option("--d-embed", config.d_embed, "Embedding dimension")->capture_default_str();
        cmd->add_option("--embed-input-size", config.input_size, "Embedder patch size in pixels")->capture_default_str();
        cmd->add_option("--misalignment", config.misalignment_strength, "Text/image misalignment strength (0: identity)")
            ->capture_default_str();
        cmd->add_option("--misalignment-seed", config.misalignment_seed, "Seed of the misalignment rotation")
            ->capture_default_str();
        cmd->add_option("--interpolation", interpolation, "Segment resize interpolation: bilinear or nearest")
            ->capture_default_str();
    }
    ToyEmbedderConfig get() const {
        ToyEmbedderConfig c = config;
        c.interpolation = parse_interpolation(interpolation);
        return c;
    }
};

struct GuidanceFlags {
    std::string mode = "fast";
    double scale = 3.0;
    double scale_global = 3.0;
    double scale_scene = 3.0;

    void add(CLI::App* cmd) {
        cmd->add_option("--mode", mode, "Guidance mode: fast (one joint scale) or multi (per-condition scales)")
            ->capture_default_str();
        cmd->add_option("--scale", scale, "Joint guidance scale s (fast mode)")->capture_default_str();
        cmd->add_option("--scale-global", scale_global, "Global-text guidance scale (multi mode)")->capture_default_str();
        cmd->add_option("--scale-scene", scale_scene, "Spatio-textual guidance scale (multi mode)")->capture_default_str();
    }
    GuidanceSpec get() const {
        if (mode == "fast") return GuidanceSpec::fast(scale);
        if (mode == "multi") return GuidanceSpec::multi(scale_global, scale_scene);
        throw ValidationError("unknown guidance mode '" + mode + "' (expected multi or fast)");
    }
};

void log_line(const std::string& s) { std::cerr << s << std::endl; }

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text_file(path, j.dump(2) + "\n");
}

// --- commands -------------------------------------------------------------------

struct MakeCorpusArgs {
    std::string out;
    CorpusSpec spec;
};

void cmd_make_corpus(const MakeCorpusArgs& a) {
    const int n = write_shapes_corpus(a.out, a.spec);
    log_line("wrote " + std::to_string(n) + " samples to " + a.out);
}

struct TrainPriorArgs {
    std::string corpus, out, split = "train";
    std::size_t limit = 0;
    bool bias = false;
    EmbedderFlags embedder;
};

void cmd_train_prior(const TrainPriorArgs& a) {
    const std::vector<DenseSample> samples = read_corpus(a.corpus, a.split, a.limit);
    if (samples.empty()) throw ValidationError("no samples in split '" + a.split + "' of " + a.corpus);
    const ToyEmbedder embedder(a.embedder.get());
    const EmbeddingPairs pairs = collect_prior_pairs(samples, embedder);
    PriorTrainConfig pc;
    pc.bias = a.bias;
    const PriorModel prior = train_prior(pairs.text, pairs.image, pc);
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < pairs.text.size(); ++i) {
        before += cosine(pairs.text[i], pairs.image[i]);
        after += cosine(apply_prior(prior, pairs.text[i]), pairs.image[i]);
    }
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    save_prior(a.out, prior);
    const double n = static_cast<double>(pairs.text.size());
    std::cout << nlohmann::json{{"pairs", pairs.text.size()},
                                {"train_loss", prior.train_loss()},
                                {"mean_cosine_before", before / n},
                                {"mean_cosine_after", after / n},
                                {"fingerprint", prior.fingerprint()}}
                     .dump()
              << "\n";
}

struct TrainArgs {
    std::string corpus, out, prior, space = "pixel", cond = "st", schedule = "linear", split = "train";
    std::string config_file;
    std::size_t limit = 0;
    TrainConfig config;
    EmbedderFlags embedder;
};

void cmd_train(TrainArgs a) {
    a.config.space = parse_space(a.space);
    a.config.cond = parse_cond_kind(a.cond);
    a.config.schedule = parse_schedule_kind(a.schedule);
    a.config.embedder = a.embedder.get();
    a.config.validate();
    const std::vector<DenseSample> samples = read_corpus(a.corpus, a.split, a.limit);
    if (samples.empty()) throw ValidationError("no samples in split '" + a.split + "' of " + a.corpus);
    std::optional<PriorModel> prior;
    if (!a.prior.empty()) prior = load_prior(a.prior);
    const ToyEmbedder embedder(a.config.embedder);
    log_line("embedding " + std::to_string(samples.size()) + " samples");
    const std::vector<TrainExample> examples = prepare_examples(samples, embedder);
    const TrainResult r = train_model(examples, a.config, prior, [](const TrainLog& l) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "step %ld loss %.5f simple %.5f vlb %.5f", l.step, l.loss, l.simple, l.vlb);
        log_line(buf);
    });
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    save_checkpoint(a.out, r.bundle);
    const TrainStats& s = r.stats;
    std::cout << nlohmann::json{{"checkpoint", a.out},
                                {"fingerprint", r.bundle.fingerprint()},
                                {"steps", s.steps},
                                {"first_loss", s.first_loss},
                                {"last_loss", s.last_loss},
                                {"codec_mse", s.codec_mse},
                                {"text_dropped", s.samples ? double(s.text_dropped) / s.samples : 0.0},
                                {"spatial_dropped", s.samples ? double(s.spatial_dropped) / s.samples : 0.0},
                                {"both_dropped", s.samples ? double(s.both_dropped) / s.samples : 0.0}}
                     .dump()
              << "\n";
}

struct GenerateArgs {
    std::string scene, checkpoint, out = "out.png";
    GuidanceFlags guidance;
    int steps = 0;
    std::uint64_t seed = 0;
    bool no_prior = false, no_concat = false;
};

void cmd_generate(const GenerateArgs& a) {
    const SceneSpec scene = parse_scene(read_text_file(a.scene));
    const ModelBundle bundle = load_checkpoint(a.checkpoint);
    GenerationOptions opts;
    opts.guidance = a.guidance.get();
    opts.steps = a.steps;
    opts.use_prior = !a.no_prior;
    opts.concat_prompts = !a.no_concat;
    if (opts.steps > bundle.schedule.steps) {
        throw ValidationError("steps must be at most " + std::to_string(bundle.schedule.steps));
    }
    const std::vector<Image> images = generate_images(bundle, {scene}, {a.seed}, opts, 1);
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    write_png(a.out, images.at(0));
    log_line("wrote " + a.out);
}

struct MakeInputsArgs {
    std::string corpus, out, split = "eval";
    int count = 0;
    std::uint64_t seed = 0;
    SparseInputConfig config;
};

void cmd_make_inputs(const MakeInputsArgs& a) {
    const std::vector<DenseSample> samples = read_corpus(a.corpus, a.split);
    std::mt19937_64 rng(a.seed);
    std::vector<SparseEvalInput> inputs;
    int skipped = 0;
    for (const DenseSample& s : samples) {
        if (a.count > 0 && static_cast<int>(inputs.size()) >= a.count) break;
        auto in = make_sparse_inputs(s.labels, s.height, s.width, s.label_names, s.caption, rng, s.id, a.config);
        if (in) {
            inputs.push_back(std::move(*in));
        } else {
            ++skipped;
        }
    }
    if (inputs.empty()) throw ValidationError("no eligible samples in split '" + a.split + "'");
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    write_inputs(a.out, inputs);
    log_line("wrote " + std::to_string(inputs.size()) + " inputs (" + std::to_string(skipped) + " skipped)");
}

struct EvalArgs {
    std::string checkpoint, inputs, out = "report.json", ablation = "none", reference;
    GuidanceFlags guidance;
    int steps = 0, batch = 16;
    std::size_t limit = 0;
    std::uint64_t seed = 0;
    bool no_prior = false, no_concat = false, exchange = false;
};

nlohmann::json summary(const EvalReport& r) {
    nlohmann::json j = r.to_json();
    j.erase("records");
    return j;
}

void cmd_eval(const EvalArgs& a) {
    const ModelBundle bundle = load_checkpoint(a.checkpoint);
    std::vector<SparseEvalInput> inputs = read_inputs(a.inputs);
    if (a.limit > 0 && inputs.size() > a.limit) inputs.resize(a.limit);
    if (a.exchange) {
        // Color-exchange test: only multi-segment inputs, prompts rotated.
        std::vector<SparseEvalInput> swapped;
        for (const auto& in : inputs)
            if (in.rst.segment_count() >= 2) swapped.push_back(exchange_prompts(in));
        inputs = std::move(swapped);
    }
    if (inputs.empty()) throw ValidationError("no evaluation inputs");
    std::vector<Image> reference;
    if (!a.reference.empty()) {
        for (const DenseSample& s : read_corpus(a.reference, "eval")) reference.push_back(s.image);
    }

    EvalConfig base;
    base.generation.guidance = a.guidance.get();
    base.generation.steps = a.steps;
    base.generation.use_prior = !a.no_prior;
    base.generation.concat_prompts = !a.no_concat;
    base.seed = a.seed;
    base.batch = a.batch;

    std::vector<EvalConfig> runs;
    if (a.ablation == "none") {
        runs.push_back(base);
    } else if (a.ablation == "binary") {
        if (bundle.cond != CondKind::Binary) {
            throw ValidationError("--ablation binary needs a checkpoint trained with --cond binary");
        }
        base.generation.concat_prompts = true;
        base.label = "binary";
        runs.push_back(base);
    } else if (a.ablation == "no-prior") {
        if (bundle.cond != CondKind::SpatioTextual) throw ValidationError("--ablation no-prior needs an st checkpoint");
        EvalConfig with = base, without = base;
        with.generation.use_prior = true;
        with.label = "prior";
        without.generation.use_prior = false;
        without.label = "no-prior";
        runs = {with, without};
    } else if (a.ablation == "multi-vs-fast") {
        const std::vector<std::pair<std::string, GuidanceSpec>> sweep = {
            {"fast(3)", GuidanceSpec::fast(3.0)},
            {"multi(3,3)", GuidanceSpec::multi(3.0, 3.0)},
            {"multi(3,0)", GuidanceSpec::multi(3.0, 0.0)},
            {"multi(0,3)", GuidanceSpec::multi(0.0, 3.0)}};
        for (const auto& [label, g] : sweep) {
            EvalConfig c = base;
            c.generation.guidance = g;
            c.label = label;
            runs.push_back(c);
        }
    } else {
        throw ValidationError("unknown ablation '" + a.ablation + "' (expected none, binary, no-prior, multi-vs-fast)");
    }

    nlohmann::json out;
    std::vector<nlohmann::json> summaries;
    for (const EvalConfig& c : runs) {
        log_line("evaluating " + (c.label.empty() ? std::string("default") : c.label) + " on " +
                 std::to_string(inputs.size()) + " inputs");
        const EvalReport report = evaluate(bundle, inputs, c, reference);
        summaries.push_back(summary(report));
        if (runs.size() == 1) {
            out = report.to_json();
        } else {
            out["runs"].push_back(report.to_json());
        }
    }
    write_json(a.out, out);
    std::cout << nlohmann::json(summaries).dump() << "\n";
}

struct ServeArgs {
    std::string checkpoints, store = "spatext-jobs", host = "127.0.0.1", cors = "*";
    int port = 8080, workers = 1;
};

HttpFrontend* g_frontend = nullptr;

void cmd_serve(const ServeArgs& a) {
    auto registry = std::make_shared<CheckpointRegistry>(a.checkpoints);
    GenerationService service({a.store, a.workers}, registry);
    HttpFrontend http(service, a.cors);
    g_frontend = &http;
    std::signal(SIGINT, [](int) {
        if (g_frontend) g_frontend->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_frontend) g_frontend->stop();
    });
    log_line("serving on http://" + a.host + ":" + std::to_string(a.port));
    http.listen(a.host, a.port);
    g_frontend = nullptr;
}

void report_error(const char* kind, const std::string& message) {
    std::cerr << nlohmann::json{{"status", "error"}, {"kind", kind}, {"message", message}}.dump() << std::endl;
}

// Keys are option names without the leading dashes. Values replace whatever
// the command line gave.
void apply_config_file(CLI::App* cmd, const std::string& path) {
    if (!std::filesystem::exists(path)) throw ValidationError("config file not found: " + path);
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_file(path);
    } catch (const CLI::Error& e) {
        throw ValidationError("config file " + path + ": " + e.what());
    }
    for (const CLI::ConfigItem& item : items) {
        if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == cmd->get_name())) {
            throw ValidationError("config file " + path + ": unexpected section for '" + item.name + "'");
        }
        CLI::Option* opt = cmd->get_option_no_throw("--" + item.name);
        if (opt == nullptr || item.name == "config") {
            throw ValidationError("config file " + path + ": unknown key '" + item.name + "'");
        }
        opt->clear();
        opt->add_result(item.inputs);
        try {
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw ValidationError("config file " + path + ": " + item.name + ": " + e.what());
        }
    }
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Spatio-textual conditioning for a toy diffusion model.",
                 "spatext"};
    app.footer(
        "Defaults: VLB weight lambda = 0.001, condition dropout 0.1 per condition, guidance FAST with s = 3, "
        "DDIM 250 steps (pixel) / 50 steps (latent).\n"
        "Exit codes: 0 success, 1 invalid input, 2 runtime failure.");
    app.require_subcommand(1);
    app.set_version_flag("--version", "spatext 0.1.0");

    MakeCorpusArgs mc;
    auto* make_corpus = app.add_subcommand("make-corpus", "Generate a synthetic shapes corpus");
    make_corpus->add_option("--out", mc.out, "Corpus directory")->required();
    make_corpus->add_option("--count", mc.spec.count, "Number of samples")->capture_default_str();
    make_corpus->add_option("--eval-fraction", mc.spec.eval_fraction, "Fraction assigned to the eval split")
        ->capture_default_str();
    make_corpus->add_option("--size", mc.spec.shapes.size, "Canvas side in pixels")->capture_default_str();
    make_corpus->add_option("--min-shapes", mc.spec.shapes.min_shapes, "Minimum shapes per sample")->capture_default_str();
    make_corpus->add_option("--max-shapes", mc.spec.shapes.max_shapes, "Maximum shapes per sample")->capture_default_str();
    make_corpus->add_option("--seed", mc.spec.seed, "Random seed")->capture_default_str();

    TrainPriorArgs tp;
    auto* train_prior_cmd = app.add_subcommand("train-prior", "Fit the text-to-image embedding prior");
    train_prior_cmd->add_option("--corpus", tp.corpus, "Corpus directory")->required();
    train_prior_cmd->add_option("--out", tp.out, "Prior file")->required();
    train_prior_cmd->add_option("--split", tp.split, "Corpus split")->capture_default_str();
    train_prior_cmd->add_option("--limit", tp.limit, "Use at most this many samples (0: all)")->capture_default_str();
    train_prior_cmd->add_flag("--bias", tp.bias, "Fit an affine map instead of a linear one");
    std::uint64_t prior_seed = 0;
    train_prior_cmd->add_option("--seed", prior_seed, "Random seed (the fit is closed-form)")->capture_default_str();
    tp.embedder.add(train_prior_cmd);

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train a diffusion checkpoint");
    train->add_option("--config", tr.config_file,
                      "TOML-style key = value file with the options below; its values override flags");
    train->add_option("--corpus", tr.corpus, "Corpus directory")->required();
    train->add_option("--out", tr.out, "Checkpoint file")->required();
    train->add_option("--prior", tr.prior, "Prior file stored with the checkpoint for inference");
    train->add_option("--split", tr.split, "Corpus split")->capture_default_str();
    train->add_option("--limit", tr.limit, "Use at most this many samples (0: all)")->capture_default_str();
    train->add_option("--space", tr.space, "pixel or latent")->capture_default_str();
    train->add_option("--cond", tr.cond, "Spatial condition: st (spatio-textual) or binary")->capture_default_str();
    train->add_option("--steps", tr.config.steps, "Training steps after channel extension")->capture_default_str();
    train->add_option("--pretrain-steps", tr.config.pretrain_steps, "Text-only steps before channel extension")
        ->capture_default_str();
    train->add_option("--batch", tr.config.batch, "Batch size")->capture_default_str();
    train->add_option("--lr", tr.config.learning_rate, "Learning rate (0: 6e-5 pixel, 1e-4 latent)")
        ->capture_default_str();
    train->add_option("--grad-clip", tr.config.grad_clip, "Global gradient-norm clip (0: off)")->capture_default_str();
    train->add_option("--lambda", tr.config.lambda_vlb, "VLB weight in the hybrid loss")->capture_default_str();
    train->add_option("--dropout", tr.config.dropout, "Per-condition dropout probability")->capture_default_str();
    train->add_option("--diffusion-steps", tr.config.diffusion_steps, "Diffusion steps T")->capture_default_str();
    train->add_option("--schedule", tr.schedule, "Noise schedule: linear or cosine")->capture_default_str();
    train->add_option("--widths", tr.config.widths, "Channel widths of the three levels")->capture_default_str();
    train->add_option("--embed-dim", tr.config.embed_dim, "Time/text embedding width")->capture_default_str();
    train->add_option("--learn-variance", tr.config.learn_variance, "Learn the variance interpolation (pixel)")
        ->capture_default_str();
    train->add_option("--min-area", tr.config.min_area_fraction, "Segments below this canvas fraction are never chosen")
        ->capture_default_str();
    train->add_option("--max-segments", tr.config.max_segments, "Largest K segments per training sample")
        ->capture_default_str();
    train->add_option("--codec-steps", tr.config.codec.steps, "Autoencoder training steps (latent)")
        ->capture_default_str();
    train->add_option("--codec-factor", tr.config.codec.codec.factor, "Autoencoder downsampling factor (latent)")
        ->capture_default_str();
    train->add_option("--codec-channels", tr.config.codec.codec.latent_channels, "Latent channels (latent)")
        ->capture_default_str();
    train->add_option("--log-every", tr.config.log_every, "Log interval in steps")->capture_default_str();
    train->add_option("--seed", tr.config.seed, "Random seed")->capture_default_str();
    tr.embedder.add(train);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Sample an image for a scene file");
    generate->add_option("--scene", gen.scene, "Scene JSON file")->required();
    generate->add_option("--checkpoint", gen.checkpoint, "Checkpoint file")->required();
    generate->add_option("--out", gen.out, "Output PNG")->capture_default_str();
    gen.guidance.add(generate);
    generate->add_option("--steps", gen.steps, "DDIM steps (0: 250 pixel, 50 latent)")->capture_default_str();
    generate->add_option("--seed", gen.seed, "Noise seed")->capture_default_str();
    generate->add_flag("--no-prior", gen.no_prior, "Use text embeddings directly in the spatio-textual map");
    generate->add_flag("--no-concat", gen.no_concat, "Do not append local prompts to the global prompt");

    MakeInputsArgs mi;
    auto* make_inputs = app.add_subcommand("make-inputs", "Convert dense samples into sparse evaluation inputs");
    make_inputs->add_option("--corpus", mi.corpus, "Corpus directory")->required();
    make_inputs->add_option("--out", mi.out, "Inputs JSON file")->required();
    make_inputs->add_option("--split", mi.split, "Corpus split")->capture_default_str();
    make_inputs->add_option("--count", mi.count, "Stop after this many inputs (0: all)")->capture_default_str();
    make_inputs->add_option("--min-area", mi.config.min_area_fraction, "Minimum segment area fraction")
        ->capture_default_str();
    make_inputs->add_option("--max-segments", mi.config.max_segments, "Largest K")->capture_default_str();
    make_inputs->add_option("--seed", mi.seed, "Random seed")->capture_default_str();

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Generate for every input and score the images");
    eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    eval->add_option("--inputs", ev.inputs, "Inputs JSON file")->required();
    eval->add_option("--out", ev.out, "Report JSON file")->capture_default_str();
    eval->add_option("--ablation", ev.ablation, "Preset: none, binary, no-prior, multi-vs-fast")->capture_default_str();
    eval->add_option("--reference", ev.reference, "Corpus whose eval split feeds the Frechet distance");
    ev.guidance.add(eval);
    eval->add_option("--steps", ev.steps, "DDIM steps (0: checkpoint default)")->capture_default_str();
    eval->add_option("--batch", ev.batch, "Samples per denoiser batch")->capture_default_str();
    eval->add_option("--limit", ev.limit, "Use at most this many inputs (0: all)")->capture_default_str();
    eval->add_option("--seed", ev.seed, "Base noise seed")->capture_default_str();
    eval->add_flag("--no-prior", ev.no_prior, "Use text embeddings directly in the spatio-textual map");
    eval->add_flag("--no-concat", ev.no_concat, "Do not append local prompts to the global prompt");
    eval->add_flag("--exchange", ev.exchange, "Color-exchange test: rotate prompts across segments");

    ServeArgs sv;
    auto* serve = app.add_subcommand("serve", "Run the HTTP generation service");
    serve->add_option("--checkpoints", sv.checkpoints, "Directory of *.ckpt files")->required();
    serve->add_option("--store", sv.store, "Job store directory")->capture_default_str();
    serve->add_option("--host", sv.host, "Bind address")->capture_default_str();
    serve->add_option("--port", sv.port, "Port")->capture_default_str();
    serve->add_option("--workers", sv.workers, "Worker threads")->capture_default_str();
    serve->add_option("--cors-origin", sv.cors, "Access-Control-Allow-Origin value")->capture_default_str();
    std::uint64_t serve_seed = 0;
    serve->add_option("--seed", serve_seed, "Unused; jobs carry their own seeds")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("usage", e.what());
        return kExitValidation;
    }

    try {
        if (*train && !tr.config_file.empty()) apply_config_file(train, tr.config_file);
        if (*make_corpus) cmd_make_corpus(mc);
        if (*train_prior_cmd) cmd_train_prior(tp);
        if (*train) cmd_train(tr);
        if (*generate) cmd_generate(gen);
        if (*make_inputs) cmd_make_inputs(mi);
        if (*eval) cmd_eval(ev);
        if (*serve) cmd_serve(sv);
    } catch (const ValidationError& e) {
        report_error("validation", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        report_error("runtime", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("spatext");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace spatext
