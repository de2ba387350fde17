#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "spatext/kernels.hpp"

using namespace spatext;
using spatext::test::max_abs_diff;
using spatext::test::random_tensor;

TEST_SUITE("kernels") {

TEST_CASE("conv2d forward matches the serial reference") {
    std::mt19937_64 rng(1);
    for (auto [cin, cout, k, s, p, hw] : std::vector<std::tuple<int, int, int, int, int, int>>{
             {3, 8, 3, 1, 1, 16}, {5, 4, 3, 2, 1, 9}, {4, 6, 1, 1, 0, 7}, {2, 3, 5, 1, 2, 8}}) {
        kernels::ConvShape shape{cin, cout, k, s, p};
        const Tensor x = random_tensor(3, cin, hw, hw, rng);
        std::vector<float> w(shape.weight_size()), b(cout);
        std::normal_distribution<float> d(0.0f, 0.3f);
        for (float& v : w) v = d(rng);
        for (float& v : b) v = d(rng);
        Tensor y, y_ref;
        kernels::conv2d_forward(x, w, b, shape, y);
        kernels::reference::conv2d_forward(x, w, b, shape, y_ref);
        REQUIRE(y.same_shape(y_ref));
        CHECK(max_abs_diff(y, y_ref) < 1e-4);
    }
}

TEST_CASE("conv2d backward matches the serial reference") {
    std::mt19937_64 rng(2);
    kernels::ConvShape shape{4, 5, 3, 2, 1};
    const Tensor x = random_tensor(2, 4, 10, 10, rng);
    std::vector<float> w(shape.weight_size());
    std::normal_distribution<float> d(0.0f, 0.3f);
    for (float& v : w) v = d(rng);
    const Tensor dy = random_tensor(2, 5, shape.out_size(10), shape.out_size(10), rng);
    Tensor dx, dx_ref;
    std::vector<float> dw(w.size(), 0.0f), dw_ref(w.size(), 0.0f), db(5, 0.0f), db_ref(5, 0.0f);
    kernels::conv2d_backward(x, w, dy, shape, &dx, dw, db);
    kernels::reference::conv2d_backward(x, w, dy, shape, &dx_ref, dw_ref, db_ref);
    CHECK(max_abs_diff(dx, dx_ref) < 1e-4);
    for (std::size_t i = 0; i < dw.size(); ++i) CHECK(dw[i] == doctest::Approx(dw_ref[i]).epsilon(1e-4));
    for (std::size_t i = 0; i < db.size(); ++i) CHECK(db[i] == doctest::Approx(db_ref[i]).epsilon(1e-4));
}

TEST_CASE("silu and upsampling match the serial reference") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor(2, 3, 5, 5, rng, 3.0f);
    Tensor y, y_ref, dx, dx_ref;
    kernels::silu_forward(x, y);
    kernels::reference::silu_forward(x, y_ref);
    CHECK(max_abs_diff(y, y_ref) < 1e-5);
    const Tensor dy = random_tensor(2, 3, 5, 5, rng);
    kernels::silu_backward(x, dy, dx);
    kernels::reference::silu_backward(x, dy, dx_ref);
    CHECK(max_abs_diff(dx, dx_ref) < 1e-5);

    Tensor up, up_ref, back, back_ref;
    kernels::upsample2x_forward(x, up);
    kernels::reference::upsample2x_forward(x, up_ref);
    CHECK(max_abs_diff(up, up_ref) == 0.0);
    const Tensor dup = random_tensor(2, 3, 10, 10, rng);
    kernels::upsample2x_backward(dup, back);
    kernels::reference::upsample2x_backward(dup, back_ref);
    CHECK(max_abs_diff(back, back_ref) < 1e-6);
}

TEST_CASE("silu stays finite for extreme inputs") {
    Tensor x(1, 1, 1, 4);
    x.data()[0] = -1000.0f;
    x.data()[1] = -90.0f;
    x.data()[2] = 90.0f;
    x.data()[3] = 1000.0f;
    Tensor y, dx;
    kernels::silu_forward(x, y);
    Tensor dy(1, 1, 1, 4, 1.0f);
    kernels::silu_backward(x, dy, dx);
    for (int i = 0; i < 4; ++i) {
        CHECK(std::isfinite(y.data()[i]));
        CHECK(std::isfinite(dx.data()[i]));
    }
    CHECK(std::abs(y.data()[0]) < 1e-6);
    CHECK(y.data()[3] == doctest::Approx(1000.0f));
}

TEST_CASE("conv2d forward is independent of batch composition") {
    std::mt19937_64 rng(4);
    kernels::ConvShape shape{3, 4, 3, 1, 1};
    const Tensor x = random_tensor(4, 3, 8, 8, rng);
    std::vector<float> w(shape.weight_size(), 0.1f), b(4, 0.0f);
    std::normal_distribution<float> d(0.0f, 0.3f);
    for (float& v : w) v = d(rng);
    Tensor y_all, y_one;
    kernels::conv2d_forward(x, w, b, shape, y_all);
    kernels::conv2d_forward(slice_sample(x, 2), w, b, shape, y_one);
    CHECK(max_abs_diff(slice_sample(y_all, 2), y_one) == 0.0);
}

TEST_CASE("conv2d rejects mismatched channels") {
    kernels::ConvShape shape{3, 4, 3, 1, 1};
    std::vector<float> w(shape.weight_size()), b(4);
    Tensor y;
    CHECK_THROWS(kernels::conv2d_forward(Tensor(1, 2, 4, 4), w, b, shape, y));
}

}
