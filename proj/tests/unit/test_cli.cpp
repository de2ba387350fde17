#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "spatext/cli.hpp"
#include "spatext/data.hpp"

using namespace spatext;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("corpus to checkpoint to images") {
    test::TempDir dir("cli");
    const auto d = dir.path();
    const std::string corpus = (d / "corpus").string();
    REQUIRE(run_cli({"make-corpus", "--out", corpus, "--count", "60", "--size", "16", "--seed", "1"}) ==
            kExitOk);
    REQUIRE(run_cli({"train-prior", "--corpus", corpus, "--out", (d / "prior.bin").string()}) == kExitOk);

    write_text_file(d / "train.toml", "steps = 3\nbatch = 2\nwidths = [4, 4, 4]\nembed-dim = 8\n");
    REQUIRE(run_cli({"train", "--config", (d / "train.toml").string(), "--corpus", corpus, "--out",
                     (d / "m.ckpt").string(), "--prior", (d / "prior.bin").string(), "--diffusion-steps", "20",
                     "--log-every", "1", "--steps", "999"}) == kExitOk);
    // The config file wins over the --steps flag.
    const nlohmann::json header = read_checkpoint_header(d / "m.ckpt");
    CHECK(header["train_steps"] == 3);
    CHECK(header["resolution"] == 16);
    CHECK_FALSE(header["prior"].is_null());

    write_text_file(d / "scene.json", serialize_scene(test::two_segment_scene(16)));
    for (const char* out : {"a.png", "b.png"})
        REQUIRE(run_cli({"generate", "--scene", (d / "scene.json").string(), "--checkpoint",
                         (d / "m.ckpt").string(), "--out", (d / out).string(), "--steps", "4", "--seed", "5",
                         "--mode", "multi", "--scale-global", "3", "--scale-scene", "3"}) == kExitOk);
    const std::string a = slurp(d / "a.png");
    CHECK(a.size() > 8);
    CHECK(a == slurp(d / "b.png"));
    REQUIRE(run_cli({"generate", "--scene", (d / "scene.json").string(), "--checkpoint",
                     (d / "m.ckpt").string(), "--out", (d / "c.png").string(), "--steps", "4", "--seed", "6"}) ==
            kExitOk);
    CHECK(slurp(d / "c.png") != a);

    REQUIRE(run_cli({"make-inputs", "--corpus", corpus, "--out", (d / "inputs.jsonl").string(),
                     "--count", "4"}) == kExitOk);
    CHECK(read_inputs(d / "inputs.jsonl").size() == 4);
    REQUIRE(run_cli({"eval", "--checkpoint", (d / "m.ckpt").string(), "--inputs",
                     (d / "inputs.jsonl").string(), "--out", (d / "report.json").string(), "--steps", "2",
                     "--ablation", "multi-vs-fast"}) == kExitOk);
    const nlohmann::json report = nlohmann::json::parse(slurp(d / "report.json"));
    CHECK_FALSE(report.empty());
}

TEST_CASE("exit codes") {
    test::TempDir dir("cli");
    CHECK(run_cli({}) == kExitValidation);
    CHECK(run_cli({"bogus"}) == kExitValidation);
    CHECK(run_cli({"generate", "--scene", "x.json"}) == kExitValidation);
    CHECK(run_cli({"--help"}) == kExitOk);

    write_text_file(dir.path() / "scene.json", R"({"global_prompt": "x", "canvas": [2, 2],
        "segments": [{"prompt": "a", "mask_rle": "0,3,1"}, {"prompt": "b", "mask_rle": "2,2"}]})");
    save_checkpoint(dir.path() / "m.ckpt", test::tiny_bundle(16));
    CHECK(run_cli({"generate", "--scene", (dir.path() / "scene.json").string(), "--checkpoint",
                   (dir.path() / "m.ckpt").string(), "--out", (dir.path() / "o.png").string()}) == kExitValidation);
    CHECK(run_cli({"generate", "--scene", (dir.path() / "missing.json").string(), "--checkpoint",
                   (dir.path() / "m.ckpt").string()}) == kExitValidation);
    CHECK(run_cli({"train", "--corpus", (dir.path() / "none").string(), "--out",
                   (dir.path() / "x.ckpt").string(), "--lambda", "-1"}) == kExitValidation);
    write_text_file(dir.path() / "bad.toml", "stepz = 3\n");
    CHECK(run_cli({"train", "--config", (dir.path() / "bad.toml").string(), "--corpus", "c", "--out", "o"}) ==
          kExitValidation);
    CHECK(run_cli({"serve", "--checkpoints", (dir.path() / "none").string()}) == kExitValidation);
}

}
