#include <doctest.h>

#include <cmath>

#include "flowmatch/kernels.hpp"
#include "flowmatch/parallel.hpp"
#include "flowmatch/reference.hpp"
#include "test_util.hpp"

using namespace flowmatch;
using testutil::random_tensor;

TEST_CASE("tensor rejects mismatched data") {
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
    const Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
    CHECK(t(1, 2) == 5);
    CHECK(t.reshaped({3, 2})(2, 0) == 4);
}

TEST_CASE("matmul small cases") {
    TensorD eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1;
    CHECK(matmul_blocked(eye, eye, 2) == eye);

    const TensorD a({2, 2}, {1, 2, 3, 4});
    const TensorD p({2, 2}, {0, 1, 1, 0});
    CHECK(matmul_blocked(a, p, 64) == TensorD({2, 2}, {2, 1, 4, 3}));
    CHECK_THROWS_AS(matmul_blocked(a, TensorD({3, 2}), 4), DimensionError);
}

TEST_CASE("deterministic matmul is block and thread independent") {
    const TensorD a = tensor_cast<double>(random_tensor({17, 13}, 1));
    const TensorD b = tensor_cast<double>(random_tensor({13, 9}, 2));
    const TensorD oracle = reference::matmul(a, b);
    const TensorD c4 = matmul_blocked(a, b, 4);
    const TensorD c13 = matmul_blocked(a, b, 13);
    CHECK(c4 == c13);
    CHECK(c4 == oracle);
    parallel::ThreadScope scope(8);
    CHECK(matmul_blocked(a, b, 3) == oracle);
}

TEST_CASE("non-deterministic matmul stays close") {
    const Tensor a = random_tensor({40, 300}, 3);
    const Tensor b = random_tensor({300, 20}, 4);
    const TensorD oracle = reference::matmul(tensor_cast<double>(a), tensor_cast<double>(b));
    for (std::size_t block : {7u, 64u}) {
        CHECK(testutil::max_abs_diff(matmul_blocked(a, b, block, false), oracle) < 1e-4);
    }
}

TEST_CASE("softmax fixtures") {
    const Tensor s = softmax_lastdim(Tensor({3}, {1.f, 2.f, 3.f}));
    CHECK(s[0] == doctest::Approx(0.09003057).epsilon(1e-7));
    CHECK(s[1] == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(s[2] == doctest::Approx(0.66524096).epsilon(1e-7));

    const TensorD u = softmax_lastdim(TensorD({3}, {0, 0, 0}));
    for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3.0));

    const Tensor big = softmax_lastdim(Tensor({2}, {1000.f, 0.f}));
    CHECK(big[0] == 1.0f);
    CHECK(big[1] == 0.0f);

    CHECK_THROWS_AS(softmax_lastdim(Tensor({2, 0})), DimensionError);
}

TEST_CASE("softmax rows match the double oracle") {
    const Tensor x = random_tensor({9, 9}, 5, 3.0);
    const Tensor s = softmax_lastdim(x);
    for (std::size_t i = 0; i < 9; ++i) {
        std::vector<double> row(x.data() + i * 9, x.data() + i * 9 + 9);
        const auto ref = reference::softmax(row);
        for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(s(i, j) - ref[j]) < 1e-6);
    }
}

TEST_CASE("conv2d fixtures") {
    const Tensor x = random_tensor({4, 4, 1}, 6);
    CHECK(conv2d(x, Tensor({1, 1, 1, 1}, {1.f}), 1, 0) == x);

    const Tensor ones({4, 4, 1}, 1.f);
    const Tensor pooled = conv2d(ones, Tensor({2, 2, 1, 1}, 1.f), 2, 0);
    CHECK(pooled.shape() == Shape{2, 2, 1});
    for (float v : pooled.values()) CHECK(v == 4.f);

    CHECK_THROWS_AS(conv2d(ones, Tensor({2, 2, 1, 1}, 1.f), 3, 0), DimensionError);
    CHECK_THROWS_AS(conv2d(ones, Tensor({1, 1, 2, 1}, 1.f), 1, 0), DimensionError);
}

TEST_CASE("conv2d matches the sliding-window oracle") {
    const Tensor x = random_tensor({5, 5, 2}, 7);
    const Tensor w = random_tensor({3, 3, 2, 3}, 8);
    const Tensor y = conv2d(x, w, 1, 1);
    const TensorD ref = reference::conv2d(tensor_cast<double>(x), tensor_cast<double>(w), ConvGeometry::symmetric(1, 1));
    CHECK(testutil::max_abs_diff(y, ref) < 1e-6);

    const ConvGeometry g = ConvGeometry::same(3, 2, 6);
    CHECK(g.pad_begin == 0);
    CHECK(g.pad_end == 1);
    const Tensor x6 = random_tensor({6, 6, 2}, 9);
    const Tensor y6 = conv2d(x6, w, g);
    CHECK(y6.shape() == Shape{3, 3, 3});
    CHECK(testutil::max_abs_diff(y6, reference::conv2d(tensor_cast<double>(x6), tensor_cast<double>(w), g)) < 1e-6);
}

TEST_CASE("bilinear resize") {
    const Tensor c({3, 3, 1}, 7.f);
    const Tensor resized = bilinear_resize(c, 5, 8);
    for (float v : resized.values()) CHECK(v == doctest::Approx(7.0));

    // Half-pixel centres with edge clamping.
    const Tensor col({2, 1, 1}, {0.f, 1.f});
    const Tensor up = bilinear_resize(col, 4, 1);
    CHECK(up[0] == 0.f);
    CHECK(up[1] == 0.25f);
    CHECK(up[2] == 0.75f);
    CHECK(up[3] == 1.f);

    Tensor r({8, 8, 1});
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<float> unit(0.f, 1.f);
    for (float& v : r.values()) v = unit(rng);
    const Tensor up2 = bilinear_resize(r, 16, 16);
    const TensorD ref_up = reference::bilinear_resize(tensor_cast<double>(r), 16, 16);
    CHECK(testutil::max_abs_diff(up2, ref_up) < 1e-6);
    CHECK(testutil::max_abs_diff(bilinear_resize(up2, 8, 8), reference::bilinear_resize(ref_up, 8, 8)) < 1e-6);

    // Smooth field in [0, 1]: the x2 up/down round trip stays within 0.25.
    Tensor smooth({8, 8, 1});
    for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
            smooth(y, x, 0) = static_cast<float>(0.5 + 0.3 * std::sin(0.7 * x + 0.4 * y) + 0.1 * (unit(rng) - 0.5));
        }
    }
    const Tensor back = bilinear_resize(bilinear_resize(smooth, 16, 16), 8, 8);
    double worst = 0;
    for (std::size_t i = 0; i < smooth.size(); ++i) worst = std::max(worst, double(std::abs(back[i] - smooth[i])));
    CHECK(worst < 0.25);
}

TEST_CASE("elementwise helpers") {
    Tensor g({3}, {-1.f, 0.f, 1.f});
    gelu_inplace(g);
    CHECK(g[0] == doctest::Approx(-0.15865525393145707));
    CHECK(g[1] == 0.f);
    CHECK(g[2] == doctest::Approx(0.8413447460685429));

    const Tensor ln = layer_norm_lastdim(Tensor({1, 4}, {1.f, 2.f, 3.f, 4.f}));
    double mean = 0, var = 0;
    for (float v : ln.values()) mean += v / 4.0;
    for (float v : ln.values()) var += (v - mean) * (v - mean) / 4.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));

    const Tensor t = transpose2d(Tensor({2, 3}, {0, 1, 2, 3, 4, 5}));
    CHECK(t == Tensor({3, 2}, {0, 3, 1, 4, 2, 5}));

    const Tensor cat = concat_lastdim(Tensor({1, 1, 2}, {1, 2}), Tensor({1, 1, 1}, {3}));
    CHECK(cat == Tensor({1, 1, 3}, {1, 2, 3}));

    Tensor b({2, 2}, {0, 0, 0, 0});
    add_bias_lastdim(b, Tensor({2}, {1, 2}));
    CHECK(b == Tensor({2, 2}, {1, 2, 1, 2}));
}

TEST_CASE("non-finite input is reported") {
    Tensor x({2, 2}, 1.f);
    x[3] = NAN;
    CHECK_THROWS_AS(softmax_lastdim(x), NumericError);
    CHECK_THROWS_AS(matmul_blocked(x, x, 2), NumericError);
}
