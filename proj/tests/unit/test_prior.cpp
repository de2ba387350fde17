#include <doctest.h>

#include "helpers.hpp"
#include "spatext/data.hpp"
#include "spatext/prior.hpp"

using namespace spatext;

TEST_SUITE("prior") {

TEST_CASE("least squares recovers an exact linear map") {
    std::mt19937_64 rng(1);
    const int d = 8;
    Eigen::MatrixXd w = Eigen::MatrixXd::Random(d, d);
    std::vector<EmbeddingVector> text, image;
    std::normal_distribution<double> nd;
    for (int i = 0; i < 100; ++i) {
        Eigen::VectorXd x(d);
        for (int k = 0; k < d; ++k) x[k] = nd(rng);
        text.push_back(to_embedding(x));
        image.push_back(to_embedding(w * x));
    }
    const PriorModel p = train_prior(text, image);
    CHECK((p.weight() - w).norm() < 1e-4);
    CHECK(p.train_loss() < 1e-8);
    const EmbeddingVector y = apply_prior(p, text[0]);
    CHECK(cosine(y, image[0]) == doctest::Approx(1.0).epsilon(1e-6));
    double n2 = 0;
    for (float v : y) n2 += double(v) * v;
    CHECK(n2 == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("prior undoes the toy misalignment on corpus pairs") {
    ToyEmbedder e;
    std::mt19937_64 rng(2);
    std::vector<DenseSample> samples;
    for (int i = 0; i < 150; ++i) {
        const ShapesSample s = gen_shapes(rng);
        DenseSample d;
        d.image = s.image;
        d.height = d.width = 32;
        d.labels = s.label_map();
        d.label_names = s.label_names();
        d.caption = s.caption;
        samples.push_back(std::move(d));
    }
    const EmbeddingPairs pairs = collect_prior_pairs(samples, e);
    REQUIRE(pairs.text.size() == pairs.image.size());
    const PriorModel p = train_prior(pairs.text, pairs.image);
    double before = 0, after = 0;
    for (std::size_t i = 0; i < pairs.text.size(); ++i) {
        before += cosine(pairs.text[i], pairs.image[i]);
        after += cosine(apply_prior(p, pairs.text[i]), pairs.image[i]);
    }
    before /= double(pairs.text.size());
    after /= double(pairs.text.size());
    MESSAGE("mean text/image cosine " << before << " -> " << after);
    CHECK(after > 0.95);
    CHECK(after > before + 0.2);
}

TEST_CASE("prior training and application errors") {
    std::vector<EmbeddingVector> few = {{1, 0, 0}, {0, 1, 0}};
    CHECK_THROWS_AS(train_prior(few, few), ValidationError);
    std::vector<EmbeddingVector> text = {{1, 0}, {0, 1}, {1, 1}};
    std::vector<EmbeddingVector> image = {{1, 0}, {0, 1}};
    CHECK_THROWS_AS(train_prior(text, image), ValidationError);
    image.push_back({std::numeric_limits<float>::quiet_NaN(), 0});
    CHECK_THROWS_AS(train_prior(text, image), ValidationError);
    const PriorModel id = PriorModel::identity(2);
    CHECK_THROWS_AS(apply_prior(id, {0, 0}), ValidationError);
    CHECK_THROWS_AS(apply_prior(id, {1, 0, 0}), ValidationError);
    CHECK(apply_prior(id, {3, 4}) == EmbeddingVector{0.6f, 0.8f});
}

TEST_CASE("prior save and load round trip") {
    std::mt19937_64 rng(3);
    Eigen::MatrixXd w = Eigen::MatrixXd::Random(4, 4);
    Eigen::VectorXd b = Eigen::VectorXd::Random(4);
    const PriorModel p(w, b, 0.25);
    test::TempDir dir("prior");
    save_prior(dir.path() / "prior.bin", p);
    const PriorModel q = load_prior(dir.path() / "prior.bin");
    CHECK(q.weight() == p.weight());
    CHECK(q.bias() == p.bias());
    CHECK(q.fingerprint() == p.fingerprint());
    CHECK(PriorModel::identity(4).fingerprint() != p.fingerprint());
    CHECK_THROWS(load_prior(dir.path() / "missing.bin"));
    write_text_file(dir.path() / "junk.bin", "not a prior");
    CHECK_THROWS_AS(load_prior(dir.path() / "junk.bin"), ValidationError);
}

}
