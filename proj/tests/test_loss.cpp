#include <doctest.h>

#include <cmath>

#include "flowmatch/loss.hpp"
#include "flowmatch/matcher.hpp"
#include "flowmatch/propagation.hpp"
#include "test_util.hpp"

using namespace flowmatch;

namespace {

FlowField constant_field(std::size_t h, std::size_t w, float u, float v) {
    Tensor t({h, w, 2});
    for (std::size_t p = 0; p < h * w; ++p) {
        t[2 * p] = u;
        t[2 * p + 1] = v;
    }
    return FlowField(t);
}

TensorD random_d(Shape s, std::uint64_t seed, double scale = 1.0) {
    return tensor_cast<double>(testutil::random_tensor(std::move(s), seed, scale));
}

}  // namespace

TEST_CASE("sequence loss arithmetic") {
    const FlowField gt = constant_field(3, 4, 0.f, 0.f);
    const std::vector<FlowField> exact{gt, gt};
    CHECK(flow_loss(exact, gt, 0.9).total == 0.0);

    const std::vector<FlowField> one{constant_field(3, 4, 1.f, 1.f)};
    CHECK(flow_loss(one, gt, 0.9).total == 2.0);

    // Raw losses 4 and 2.
    const std::vector<FlowField> two{constant_field(3, 4, 3.f, 1.f), constant_field(3, 4, -1.f, 1.f)};
    const LossReport r = flow_loss(two, gt, 0.9);
    CHECK(std::abs(r.total - 5.6) <= 1e-9);
    REQUIRE(r.per_prediction.size() == 2);
    CHECK(r.per_prediction[0].weight == doctest::Approx(0.9));
    CHECK(r.per_prediction[0].raw == 4.0);
    CHECK(r.per_prediction[1].weight == 1.0);
    CHECK(r.per_prediction[1].raw == 2.0);
}

TEST_CASE("loss masking") {
    FlowField gt(Tensor({1, 2, 2}), std::vector<std::uint8_t>{1, 0});
    const std::vector<FlowField> pred{FlowField(Tensor({1, 2, 2}, {1.f, 0.f, 100.f, 100.f}))};
    CHECK(flow_loss(pred, gt, 0.9).total == 1.0);
    CHECK_THROWS_AS(flow_loss(pred, gt, 0.9, std::vector<std::uint8_t>{0, 1}), UndefinedMetricError);
    CHECK_THROWS_AS(flow_loss(std::vector<FlowField>{}, gt, 0.9), DimensionError);
    CHECK_THROWS_AS(flow_loss(std::vector<FlowField>{FlowField(2, 2)}, gt, 0.9), DimensionError);
}

TEST_CASE("chain predictions agree with the float engine") {
    const TensorD f1 = random_d({3, 4, 5}, 1), f2 = random_d({3, 4, 5}, 2);
    const auto [raw, prop] = matching_chain_predictions(f1, f2);
    const Tensor engine_raw = match_flow(tensor_cast<float>(f1), tensor_cast<float>(f2));
    const Tensor engine_prop = propagate_flow(tensor_cast<float>(f1), engine_raw);
    CHECK(testutil::max_abs_diff(engine_raw, raw) < 1e-5);
    CHECK(testutil::max_abs_diff(engine_prop, prop) < 1e-5);
}

TEST_CASE("gradient check on random 3x3x4 features") {
    const TensorD f1 = random_d({3, 3, 4}, 3), f2 = random_d({3, 3, 4}, 4), gt = random_d({3, 3, 2}, 5, 2.0);
    const GradcheckReport r = gradcheck_matching_chain(f1, f2, gt, 1e-5);
    CHECK(r.checked == 72);
    CHECK(r.max_rel_err < 1e-4);
    CHECK(r.analytic.loss == doctest::Approx(matching_chain_loss(f1, f2, gt)));
}

TEST_CASE("saturated matches are stationary") {
    const std::size_t h = 2, w = 3, n = h * w;
    TensorD f({h, w, n});
    for (std::size_t p = 0; p < n; ++p) f[p * n + p] = std::sqrt(50.0 * std::sqrt(double(n)));
    TensorD gt({h, w, 2}, 0.5);
    const ChainGradient g = matching_chain_gradient(f, f, gt);
    double worst = 0;
    for (double v : g.grad_f1.values()) worst = std::max(worst, std::abs(v));
    for (double v : g.grad_f2.values()) worst = std::max(worst, std::abs(v));
    CHECK(worst < 1e-6);
    CHECK(g.loss == doctest::Approx(1.9));  // (0.9 + 1) * (0.5 + 0.5)
}

TEST_CASE("central differences converge at second order") {
    const TensorD f1 = random_d({2, 3, 3}, 6), f2 = random_d({2, 3, 3}, 7), gt = random_d({2, 3, 2}, 8, 2.0);
    const ChainGradient g = matching_chain_gradient(f1, f2, gt);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < g.grad_f1.size(); ++i) {
        if (std::abs(g.grad_f1[i]) > std::abs(g.grad_f1[idx])) idx = i;
    }
    const double e1 = std::abs(central_difference(f1, f2, gt, 0, idx, 0.02) - g.grad_f1[idx]);
    const double e2 = std::abs(central_difference(f1, f2, gt, 0, idx, 0.01) - g.grad_f1[idx]);
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("gradient check preconditions") {
    CHECK_THROWS_AS(gradcheck_matching_chain(random_d({6, 7, 2}, 1), random_d({6, 7, 2}, 2), TensorD({6, 7, 2}), 1e-5),
                    DimensionError);
    TensorD bad = random_d({2, 2, 2}, 1);
    bad[0] = INFINITY;
    CHECK_THROWS_AS(matching_chain_gradient(bad, random_d({2, 2, 2}, 2), TensorD({2, 2, 2})), NumericError);
}
