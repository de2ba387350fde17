#include <doctest.h>

#include "helpers.hpp"
#include "spatext/pipeline.hpp"
#include "spatext/prior.hpp"
#include "spatext/repr.hpp"

using namespace spatext;

TEST_SUITE("pipeline") {

TEST_CASE("conditions for a spatio-textual checkpoint") {
    ModelBundle b = test::tiny_bundle(16);
    const ToyEmbedder e(b.embedder);
    const SceneSpec scene = test::two_segment_scene(16);
    GenerationOptions opt;

    ConditionSet c = prepare_conditions(b, e, scene, opt);
    REQUIRE(c.global_text.has_value());
    CHECK(*c.global_text == e.embed_text("a white background, a red circle, a blue square"));
    REQUIRE(c.spatial.has_value());
    CHECK(c.spatial->c() == 16);
    CHECK(c.spatial->h() == 16);
    const EmbeddingVector red = e.embed_text("a red circle");
    CHECK(c.spatial->at(0, 0, 2, 2) == red[0]);
    CHECK(c.spatial->at(0, 5, 0, 0) == 0.0f);

    opt.concat_prompts = false;
    CHECK(*prepare_conditions(b, e, scene, opt).global_text == e.embed_text("a white background"));

    // The stored prior maps local prompts; use_prior = false bypasses it.
    b.prior = PriorModel(e.misalignment().transpose(), Eigen::VectorXd::Zero(16), 0.0);
    c = prepare_conditions(b, e, scene, opt);
    const Eigen::VectorXd canon = e.canonical_object(color_index("red"), shape_index("circle"));
    CHECK(std::abs(c.spatial->at(0, 0, 2, 2) - float(canon[0])) < 1e-5);
    opt.use_prior = false;
    CHECK(prepare_conditions(b, e, scene, opt).spatial->at(0, 0, 2, 2) == red[0]);

    SceneSpec empty;
    empty.height = empty.width = 16;
    c = prepare_conditions(b, e, empty, opt);
    CHECK_FALSE(c.global_text.has_value());
    for (float v : c.spatial->values()) CHECK(v == 0.0f);
}

TEST_CASE("conditions for a binary checkpoint and validation errors") {
    const ModelBundle b = test::tiny_bundle(16, CondKind::Binary);
    const ToyEmbedder e(b.embedder);
    const SceneSpec scene = test::two_segment_scene(16);
    const ConditionSet c = prepare_conditions(b, e, scene, {});
    CHECK(c.spatial->c() == 1);
    CHECK(c.spatial->at(0, 0, 2, 2) == 1.0f);
    CHECK(c.spatial->at(0, 0, 0, 0) == 0.0f);

    CHECK_THROWS_WITH_AS(prepare_conditions(b, e, test::two_segment_scene(8), {}), doctest::Contains("canvas"),
                         ValidationError);
    SceneSpec oov = scene;
    oov.segments[0].prompt = "a purple circle";
    CHECK_THROWS_AS(prepare_conditions(b, e, oov, {}), ValidationError);
}

TEST_CASE("generation is deterministic and independent of chunking") {
    const ModelBundle b = test::tiny_bundle(16);
    std::vector<SceneSpec> scenes(3, test::two_segment_scene(16));
    scenes[1].segments.pop_back();
    const std::vector<std::uint64_t> seeds = {derive_seed(1, 0), derive_seed(1, 1), derive_seed(1, 2)};
    GenerationOptions opt;
    opt.steps = 4;
    int calls = 0;
    const auto a = generate_images(b, scenes, seeds, opt, 3, [&](int, int) { ++calls; });
    const auto c = generate_images(b, scenes, seeds, opt, 1);
    REQUIRE(a.size() == 3);
    CHECK(calls > 0);
    for (int i = 0; i < 3; ++i) {
        CHECK(a[i].height == 16);
        CHECK(quantize(a[i]).pixels == quantize(c[i]).pixels);
        for (float v : a[i].pixels) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    CHECK(a[0].pixels != a[2].pixels);
    CHECK_THROWS_AS(generate_images(b, scenes, {1}, opt), ValidationError);
}

TEST_CASE("latent generation decodes to full resolution") {
    ModelBundle b = test::tiny_bundle(16);
    b.space = Space::Latent;
    b.codec = Codec({2, 4, 8}, 1);
    DenoiserConfig dc = b.denoiser.config();
    dc.space_channels = 4;
    dc.cond_channels = 0;
    dc.learn_variance = false;
    std::mt19937_64 rng(1);
    b.denoiser = extend_input_channels(Denoiser(dc, 1), 16, rng);
    GenerationOptions opt;
    opt.steps = 2;
    const auto imgs = generate_images(b, {test::two_segment_scene(16)}, {7}, opt);
    CHECK(imgs[0].height == 16);
    CHECK(imgs[0].width == 16);
}

TEST_CASE("derived seeds") {
    CHECK(derive_seed(0, 0) != derive_seed(0, 1));
    CHECK(derive_seed(0, 1) != derive_seed(1, 0));
    CHECK(derive_seed(5, 9) == derive_seed(5, 9));
}

TEST_CASE("guidance json") {
    GuidanceSpec g = guidance_from_json(nlohmann::json::parse(R"({"mode":"multi","scales":{"global":2,"scene":0}})"));
    CHECK(g.mode == GuidanceMode::Multi);
    CHECK(g.scales == std::vector<double>{2.0, 0.0});
    g = guidance_from_json(nlohmann::json::parse(R"({"mode":"fast","scales":{"joint":1.5}})"));
    CHECK(g.mode == GuidanceMode::Fast);
    CHECK(g.scales == std::vector<double>{1.5});
    CHECK(guidance_from_json(guidance_to_json(GuidanceSpec::multi(3, 4))).scales == std::vector<double>{3, 4});
    for (const char* bad : {R"({"mode":"slow","scales":{"joint":1}})", R"({"mode":"fast"})",
                            R"({"mode":"fast","scales":{"joint":-1}})", R"({"mode":"multi","scales":{"global":1}})",
                            R"({"mode":"fast","scales":{"joint":"x"}})", R"([1])"})
        CHECK_THROWS_AS(guidance_from_json(nlohmann::json::parse(bad)), ValidationError);
}

}
