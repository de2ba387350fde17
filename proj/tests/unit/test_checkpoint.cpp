#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "spatext/checkpoint.hpp"
#include "spatext/prior.hpp"

using namespace spatext;

namespace {

DenoiserInput probe_input(const ModelBundle& b, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int r = b.model_resolution();
    DenoiserInput in;
    in.x_t = test::random_tensor(2, b.denoiser.config().space_channels, r, r, rng);
    in.cond_map = test::random_tensor(2, b.denoiser.cond_channels(), r, r, rng);
    in.text = test::random_tensor(2, b.embedder.d_embed, 1, 1, rng);
    in.text_null = {0, 1};
    in.t = {3, 40};
    return in;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    f << s;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("round trip preserves the model exactly") {
    test::TempDir dir("ckpt");
    ModelBundle b = test::tiny_bundle(16);
    b.prior = PriorModel(Eigen::MatrixXd::Random(16, 16), Eigen::VectorXd::Random(16), 0.5);
    b.train_steps = 17;
    b.train_config = {{"note", "unit"}};
    save_checkpoint(dir.path() / "m.ckpt", b);
    const ModelBundle c = load_checkpoint(dir.path() / "m.ckpt");
    CHECK(c.fingerprint() == b.fingerprint());
    CHECK(c.train_steps == 17);
    CHECK(c.cond == CondKind::SpatioTextual);
    REQUIRE(c.prior.has_value());
    CHECK(c.prior->weight() == b.prior->weight());
    const DenoiserInput in = probe_input(b, 1);
    CHECK(test::max_abs_diff(c.denoiser.infer(in).eps, b.denoiser.infer(in).eps) == 0.0);
    CHECK(c.schedule.steps == b.schedule.steps);

    const nlohmann::json h = read_checkpoint_header(dir.path() / "m.ckpt");
    CHECK(h["space"] == "pixel");
    CHECK(h["cond"] == "st");
    CHECK(h["resolution"] == 16);
    CHECK(h["d_embed"] == 16);
    CHECK(h["fingerprint"] == b.fingerprint());
    CHECK(b.default_sampling_steps() == 250);
}

TEST_CASE("latent and binary bundles round trip") {
    test::TempDir dir("ckpt");
    ModelBundle b = test::tiny_bundle(16, CondKind::Binary);
    b.space = Space::Latent;
    b.codec = Codec({2, 4, 8}, 4);
    b.codec.set_latent_scale(0.7);
    DenoiserConfig dc = b.denoiser.config();
    dc.space_channels = 4;
    dc.cond_channels = 0;
    dc.learn_variance = false;
    std::mt19937_64 rng(5);
    b.denoiser = extend_input_channels(Denoiser(dc, 5), 1, rng);
    CHECK(b.model_resolution() == 8);
    CHECK(b.default_sampling_steps() == 50);
    save_checkpoint(dir.path() / "l.ckpt", b);
    const ModelBundle c = load_checkpoint(dir.path() / "l.ckpt");
    CHECK(c.space == Space::Latent);
    CHECK(c.cond == CondKind::Binary);
    CHECK(c.codec.latent_scale() == 0.7);
    const Tensor x = test::random_tensor(1, 3, 16, 16, rng);
    CHECK(test::max_abs_diff(c.codec.encode(x), b.codec.encode(x)) == 0.0);
    const DenoiserInput in = probe_input(b, 2);
    CHECK(test::max_abs_diff(c.denoiser.infer(in).eps, b.denoiser.infer(in).eps) == 0.0);
}

TEST_CASE("damaged checkpoints are rejected") {
    test::TempDir dir("ckpt");
    const ModelBundle b = test::tiny_bundle(16);
    save_checkpoint(dir.path() / "m.ckpt", b);
    const std::string bytes = read_bytes(dir.path() / "m.ckpt");

    std::string bad = bytes;
    bad[0] = 'X';
    write_bytes(dir.path() / "magic.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "magic.ckpt"), ValidationError);

    bad = bytes;
    bad[8] = char(99);
    write_bytes(dir.path() / "version.ckpt", bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.path() / "version.ckpt"), doctest::Contains("version"), ValidationError);

    write_bytes(dir.path() / "short.ckpt", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "short.ckpt"), ValidationError);

    // Editing the header without refreshing its fingerprint.
    bad = bytes;
    const auto pos = bad.find("\"train_steps\":0");
    REQUIRE(pos != std::string::npos);
    bad[pos + 14] = '5';
    write_bytes(dir.path() / "edited.ckpt", bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.path() / "edited.ckpt"), doctest::Contains("fingerprint"),
                         ValidationError);

    CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), ValidationError);
}

TEST_CASE("enum parsing") {
    CHECK(parse_space("latent") == Space::Latent);
    CHECK(parse_cond_kind("binary") == CondKind::Binary);
    CHECK(to_string(Space::Pixel) == "pixel");
    CHECK(to_string(CondKind::SpatioTextual) == "st");
    CHECK_THROWS_AS(parse_space("voxel"), ValidationError);
    CHECK_THROWS_AS(parse_cond_kind("mask"), ValidationError);
}

}
