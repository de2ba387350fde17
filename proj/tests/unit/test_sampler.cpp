#include <doctest.h>

#include "helpers.hpp"
#include "spatext/guidance.hpp"
#include "spatext/sampler.hpp"

using namespace spatext;

namespace {

// eps = 0.1 x + text_term + spatial_term, with each term distinct so the
// passes can be told apart. Counts the rows it is asked to evaluate.
class StubModel : public InferenceModel {
public:
    mutable int rows = 0;
    mutable int calls = 0;

    Prediction infer(const DenoiserInput& in) const override {
        ++calls;
        rows += in.x_t.n();
        Prediction p;
        p.eps = Tensor(in.x_t.n(), in.x_t.c(), in.x_t.h(), in.x_t.w());
        for (int n = 0; n < in.x_t.n(); ++n) {
            const float text = in.text_null[n] ? -0.3f : in.text.sample(n)[0];
            for (int c = 0; c < in.x_t.c(); ++c)
                for (int y = 0; y < in.x_t.h(); ++y)
                    for (int x = 0; x < in.x_t.w(); ++x)
                        p.eps.at(n, c, y, x) = 0.1f * in.x_t.at(n, c, y, x) + text +
                                               0.5f * in.cond_map.at(n, 0, y, x) + 0.001f * in.t[n];
        }
        return p;
    }
    int space_channels() const override { return 3; }
    int cond_channels() const override { return 2; }
    int text_dim() const override { return 4; }
};

ConditionSet stub_conditions(std::mt19937_64& rng) {
    ConditionSet c;
    c.global_text = std::vector<float>{0.7f, 0.1f, 0.2f, 0.3f};
    c.spatial = test::random_tensor(1, 2, 4, 4, rng);
    return c;
}

DenoiserInput single_pass(const Tensor& x, const ConditionSet& c, bool text, bool spatial, int t) {
    DenoiserInput in;
    in.x_t = x;
    in.text = Tensor(1, 4, 1, 1);
    in.text_null = {1};
    if (text) {
        std::copy(c.global_text->begin(), c.global_text->end(), in.text.data());
        in.text_null[0] = 0;
    }
    in.cond_map = spatial ? *c.spatial : Tensor(1, 2, 4, 4);
    in.t = {t};
    return in;
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("ddim timesteps") {
    CHECK(ddim_timesteps(1000, 4) == std::vector<int>{1, 251, 501, 751});
    CHECK(ddim_timesteps(10, 10) == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    CHECK(ddim_timesteps(1000, 1) == std::vector<int>{1});
    CHECK_THROWS_AS(ddim_timesteps(1000, 1001), ValidationError);
    CHECK_THROWS_AS(ddim_timesteps(1000, 0), ValidationError);
}

TEST_CASE("seeded noise depends only on the seed") {
    const Tensor a = seeded_noise(3, 4, 4, 9), b = seeded_noise(3, 4, 4, 9), c = seeded_noise(3, 4, 4, 10);
    CHECK(test::max_abs_diff(a, b) == 0.0);
    CHECK(test::max_abs_diff(a, c) > 0.0);
}

TEST_CASE("multi guidance with a zero scene scale is single-condition guidance on the text") {
    std::mt19937_64 rng(1);
    StubModel m;
    const ConditionSet c = stub_conditions(rng);
    const Tensor x = test::random_tensor(1, 3, 4, 4, rng);
    const Tensor eps = guided_eps(m, x, {c}, GuidanceSpec::multi(2.5, 0.0), 40);
    const Tensor u = m.infer(single_pass(x, c, false, false, 40)).eps;
    const Tensor g = m.infer(single_pass(x, c, true, false, 40)).eps;
    CHECK(test::max_abs_diff(eps, cfg_single(u, g, 2.5)) < 1e-6);
}

TEST_CASE("guided estimates equal the per-pass formulas") {
    std::mt19937_64 rng(2);
    StubModel m;
    const ConditionSet c = stub_conditions(rng);
    const Tensor x = test::random_tensor(1, 3, 4, 4, rng);
    const Tensor u = m.infer(single_pass(x, c, false, false, 7)).eps;
    const Tensor g = m.infer(single_pass(x, c, true, false, 7)).eps;
    const Tensor s = m.infer(single_pass(x, c, false, true, 7)).eps;
    const Tensor j = m.infer(single_pass(x, c, true, true, 7)).eps;
    const std::vector<Tensor> both = {g, s};
    const std::vector<double> scales = {2.0, 4.0};
    CHECK(test::max_abs_diff(guided_eps(m, x, {c}, GuidanceSpec::multi(2.0, 4.0), 7), cfg_multi(u, both, scales)) <
          1e-6);
    CHECK(test::max_abs_diff(guided_eps(m, x, {c}, GuidanceSpec::fast(3.0), 7), cfg_fast(u, j, 3.0)) < 1e-6);
    // Scale 1 is the plain conditional estimate.
    CHECK(test::max_abs_diff(guided_eps(m, x, {c}, GuidanceSpec::fast(1.0), 7), j) < 1e-6);
    // Scale 0 is the unconditional one.
    CHECK(test::max_abs_diff(guided_eps(m, x, {c}, GuidanceSpec::multi(0.0, 0.0), 7), u) < 1e-6);
}

TEST_CASE("denoiser rows per step match the guidance mode") {
    std::mt19937_64 rng(3);
    StubModel m;
    std::vector<ConditionSet> conds = {stub_conditions(rng), stub_conditions(rng), stub_conditions(rng)};
    DdimOptions opt;
    opt.steps = 5;
    const NoiseSchedule sched = make_schedule(50, ScheduleKind::Linear);
    ddim_sample(m, sched, conds, GuidanceSpec::fast(3.0), {1, 2, 3}, 4, 4, opt);
    CHECK(m.rows == 5 * 3 * 2);
    CHECK(m.calls == 5);
    m.rows = 0;
    ddim_sample(m, sched, conds, GuidanceSpec::multi(3.0, 3.0), {1, 2, 3}, 4, 4, opt);
    CHECK(m.rows == 5 * 3 * 3);
}

TEST_CASE("ddim sampling is deterministic and independent of batch composition") {
    std::mt19937_64 rng(4);
    StubModel m;
    std::vector<ConditionSet> conds = {stub_conditions(rng), stub_conditions(rng)};
    DdimOptions opt;
    opt.steps = 10;
    int last_done = 0, last_total = 0;
    opt.progress = [&](int d, int t) {
        last_done = d;
        last_total = t;
    };
    const NoiseSchedule sched = make_schedule(100, ScheduleKind::Linear);
    const GuidanceSpec g = GuidanceSpec::multi(2.0, 1.0);
    const Tensor both = ddim_sample(m, sched, conds, g, {11, 12}, 4, 4, opt);
    CHECK(last_done == 10);
    CHECK(last_total == 10);
    const Tensor again = ddim_sample(m, sched, conds, g, {11, 12}, 4, 4, opt);
    CHECK(test::max_abs_diff(both, again) == 0.0);
    const Tensor second = ddim_sample(m, sched, {conds[1]}, g, {12}, 4, 4, opt);
    Tensor slice(1, 3, 4, 4);
    std::copy_n(both.sample(1), slice.size(), slice.data());
    CHECK(test::max_abs_diff(slice, second) < 1e-6);
    for (float v : both.values()) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("sampler validates its inputs") {
    std::mt19937_64 rng(5);
    StubModel m;
    const NoiseSchedule sched = make_schedule(20, ScheduleKind::Linear);
    DdimOptions opt;
    opt.steps = 21;
    CHECK_THROWS_AS(ddim_sample(m, sched, {stub_conditions(rng)}, GuidanceSpec::fast(3), {1}, 4, 4, opt),
                    ValidationError);
    opt.steps = 5;
    CHECK_THROWS_AS(ddim_sample(m, sched, {stub_conditions(rng)}, GuidanceSpec::fast(3), {1, 2}, 4, 4, opt),
                    ValidationError);
    ConditionSet bad = stub_conditions(rng);
    bad.spatial = Tensor(1, 2, 8, 8);
    CHECK_THROWS_AS(ddim_sample(m, sched, {bad}, GuidanceSpec::fast(3), {1}, 4, 4, opt), ValidationError);
    bad = stub_conditions(rng);
    bad.global_text = std::vector<float>(5, 0.0f);
    CHECK_THROWS_AS(ddim_sample(m, sched, {bad}, GuidanceSpec::fast(3), {1}, 4, 4, opt), ValidationError);
}

}
