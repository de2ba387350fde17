#include "spatext/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "spatext/hash.hpp"

namespace spatext {
namespace {

constexpr char kMagic[8] = {'S', 'P', 'T', 'X', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kFloat32 = 0;
constexpr std::uint8_t kFloat64 = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ValidationError("checkpoint truncated");
    return v;
}

struct RawTensor {
    std::vector<int> shape;
    std::uint8_t dtype = kFloat32;
    std::vector<float> f32;
    std::vector<double> f64;
};

void put_tensor(std::ostream& os, const std::string& name, const std::vector<int>& shape, const float* data,
                std::size_t count) {
    put(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(os, kFloat32);
    put(os, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
}

void put_tensor64(std::ostream& os, const std::string& name, const std::vector<int>& shape, const double* data,
                  std::size_t count) {
    put(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(os, kFloat64);
    put(os, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

nlohmann::json denoiser_json(const DenoiserConfig& c) {
    return {{"space_channels", c.space_channels}, {"cond_channels", c.cond_channels}, {"text_dim", c.text_dim},
            {"widths", c.widths},                 {"embed_dim", c.embed_dim},         {"learn_variance", c.learn_variance}};
}

DenoiserConfig denoiser_from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.space_channels = j.at("space_channels").get<int>();
    c.cond_channels = j.at("cond_channels").get<int>();
    c.text_dim = j.at("text_dim").get<int>();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.learn_variance = j.at("learn_variance").get<bool>();
    return c;
}

std::string fingerprint_of(nlohmann::json header) {
    header.erase("fingerprint");
    return "cfg-" + hex64(fnv1a(header.dump()));
}

void read_header(std::istream& f, const std::filesystem::path& path, nlohmann::json& header) {
    char magic[8];
    if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw ValidationError(path.string() + " is not a checkpoint");
    }
    const auto version = get<std::uint32_t>(f);
    if (version != kCheckpointSchemaVersion) {
        throw ValidationError("checkpoint schema version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointSchemaVersion) + ")");
    }
    const auto len = get<std::uint64_t>(f);
    if (len > (1u << 24)) throw ValidationError("checkpoint header is implausibly large");
    std::string text(len, '\0');
    if (!f.read(text.data(), static_cast<std::streamsize>(len))) throw ValidationError("checkpoint truncated");
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("checkpoint header: ") + e.what());
    }
    if (header.value("fingerprint", std::string()) != fingerprint_of(header)) {
        throw ValidationError("checkpoint fingerprint does not match its header");
    }
}

}  // namespace

Space parse_space(const std::string& s) {
    if (s == "pixel") return Space::Pixel;
    if (s == "latent") return Space::Latent;
    throw ValidationError("unknown space '" + s + "' (expected pixel or latent)");
}
std::string to_string(Space s) { return s == Space::Pixel ? "pixel" : "latent"; }

CondKind parse_cond_kind(const std::string& s) {
    if (s == "st") return CondKind::SpatioTextual;
    if (s == "binary") return CondKind::Binary;
    throw ValidationError("unknown condition kind '" + s + "' (expected st or binary)");
}
std::string to_string(CondKind k) { return k == CondKind::SpatioTextual ? "st" : "binary"; }

nlohmann::json ModelBundle::header() const {
    nlohmann::json h;
    h["schema_version"] = kCheckpointSchemaVersion;
    h["space"] = to_string(space);
    h["cond"] = to_string(cond);
    h["resolution"] = resolution;
    h["d_embed"] = embedder.d_embed;
    h["denoiser"] = denoiser_json(denoiser.config());
    h["schedule"] = {{"kind", to_string(schedule.kind)},
                     {"steps", schedule.steps},
                     {"beta_start", schedule.beta_start},
                     {"beta_end", schedule.beta_end}};
    h["codec"] = {{"identity", codec.is_identity()},
                  {"factor", codec.config().factor},
                  {"latent_channels", codec.config().latent_channels},
                  {"width", codec.config().width},
                  {"latent_scale", codec.latent_scale()}};
    h["embedder"] = embedder.to_json();
    h["embedder_id"] = ToyEmbedder(embedder).id();
    h["prior"] = prior ? nlohmann::json(prior->fingerprint()) : nlohmann::json(nullptr);
    h["train_steps"] = train_steps;
    h["train_config"] = train_config;
    h["fingerprint"] = fingerprint_of(h);
    return h;
}

std::string ModelBundle::fingerprint() const { return header().at("fingerprint").get<std::string>(); }

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle) {
    const std::string header = bundle.header().dump();
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f.write(kMagic, sizeof(kMagic));
        put(f, static_cast<std::uint32_t>(kCheckpointSchemaVersion));
        put(f, static_cast<std::uint64_t>(header.size()));
        f.write(header.data(), static_cast<std::streamsize>(header.size()));

        Denoiser denoiser = bundle.denoiser;
        Codec codec = bundle.codec;
        std::vector<nn::NamedParam> params = denoiser.parameters();
        for (auto& p : codec.parameters()) params.push_back(p);
        const std::uint32_t extra = bundle.prior ? 2 : 0;
        put(f, static_cast<std::uint32_t>(params.size()) + extra);
        for (const auto& p : params) put_tensor(f, p.name, p.param->shape, p.param->value.data(), p.param->size());
        if (bundle.prior) {
            const int d = bundle.prior->dim();
            const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = bundle.prior->weight();
            put_tensor64(f, "prior.weight", {d, d}, w.data(), static_cast<std::size_t>(d) * d);
            put_tensor64(f, "prior.bias", {d}, bundle.prior->bias().data(), static_cast<std::size_t>(d));
        }
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint " + path.string());
    nlohmann::json header;
    read_header(f, path, header);
    return header;
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint " + path.string());
    nlohmann::json h;
    read_header(f, path, h);

    std::map<std::string, RawTensor> tensors;
    const auto count = get<std::uint32_t>(f);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint32_t>(f);
        if (name_len > 4096) throw ValidationError("checkpoint: implausible tensor name");
        std::string name(name_len, '\0');
        if (!f.read(name.data(), name_len)) throw ValidationError("checkpoint truncated");
        RawTensor t;
        t.dtype = get<std::uint8_t>(f);
        const auto rank = get<std::uint32_t>(f);
        if (rank > 8) throw ValidationError("checkpoint: implausible tensor rank");
        std::size_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            t.shape.push_back(static_cast<int>(get<std::uint32_t>(f)));
            n *= static_cast<std::size_t>(t.shape.back());
        }
        if (n > (1u << 28)) throw ValidationError("checkpoint: implausible tensor size");
        if (t.dtype == kFloat32) {
            t.f32.resize(n);
            if (!f.read(reinterpret_cast<char*>(t.f32.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
                throw ValidationError("checkpoint truncated");
            }
        } else if (t.dtype == kFloat64) {
            t.f64.resize(n);
            if (!f.read(reinterpret_cast<char*>(t.f64.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
                throw ValidationError("checkpoint truncated");
            }
        } else {
            throw ValidationError("checkpoint: unknown dtype");
        }
        tensors.emplace(std::move(name), std::move(t));
    }

    ModelBundle b;
    try {
        b.space = parse_space(h.at("space").get<std::string>());
        b.cond = parse_cond_kind(h.at("cond").get<std::string>());
        b.resolution = h.at("resolution").get<int>();
        b.embedder = ToyEmbedderConfig::from_json(h.at("embedder"));
        const auto& s = h.at("schedule");
        b.schedule = make_schedule(s.at("steps").get<int>(), parse_schedule_kind(s.at("kind").get<std::string>()),
                                   s.at("beta_start").get<double>(), s.at("beta_end").get<double>());
        const auto& c = h.at("codec");
        if (c.at("identity").get<bool>()) {
            b.codec = Codec::identity();
        } else {
            b.codec = Codec({c.at("factor").get<int>(), c.at("latent_channels").get<int>(), c.at("width").get<int>()}, 0);
            b.codec.set_latent_scale(c.at("latent_scale").get<double>());
        }
        b.denoiser = Denoiser(denoiser_from_json(h.at("denoiser")), 0);
        b.train_steps = h.value("train_steps", 0L);
        b.train_config = h.value("train_config", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint header: ") + e.what());
    }

    auto fill = [&](const std::string& name, nn::Param& p) {
        auto it = tensors.find(name);
        if (it == tensors.end() || it->second.dtype != kFloat32) {
            throw ValidationError("checkpoint is missing tensor " + name);
        }
        if (it->second.shape != p.shape) throw ValidationError("checkpoint tensor " + name + " has the wrong shape");
        p.value = it->second.f32;
    };
    b.denoiser.visit(fill);
    b.codec.visit(fill);

    if (!h.at("prior").is_null()) {
        auto w = tensors.find("prior.weight");
        auto bias = tensors.find("prior.bias");
        if (w == tensors.end() || bias == tensors.end()) throw ValidationError("checkpoint is missing the prior");
        const int d = w->second.shape.at(0);
        Eigen::MatrixXd wm(d, d);
        for (int r = 0; r < d; ++r)
            for (int col = 0; col < d; ++col) wm(r, col) = w->second.f64.at(static_cast<std::size_t>(r) * d + col);
        Eigen::VectorXd bv(d);
        for (int r = 0; r < d; ++r) bv(r) = bias->second.f64.at(r);
        b.prior = PriorModel(std::move(wm), std::move(bv), 0.0);
    }
    if (b.fingerprint() != h.at("fingerprint").get<std::string>()) {
        throw ValidationError("checkpoint fingerprint does not match the reconstructed model");
    }
    return b;
}

}  // namespace spatext
