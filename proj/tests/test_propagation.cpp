#include <doctest.h>

#include "flowmatch/instrumentation.hpp"
#include "flowmatch/propagation.hpp"
#include "flowmatch/reference.hpp"
#include "test_util.hpp"

using namespace flowmatch;
using testutil::random_tensor;

TEST_CASE("self affinity") {
    const Tensor constant({2, 3, 4}, 0.7f);
    const Tensor flat = self_affinity(constant);
    for (float v : flat.values()) CHECK(v == doctest::Approx(1.0 / 6.0));

    // norm^2 = s * sqrt(D) with s = 60 puts the diagonal logit at 60.
    const std::size_t n = 9;
    Tensor f({3, 3, n});
    for (std::size_t p = 0; p < n; ++p) f[p * n + p] = static_cast<float>(std::sqrt(60.0 * 3.0));
    const Tensor attn = self_affinity(f);
    for (std::size_t i = 0; i < n; ++i) CHECK(attn(i, i) == doctest::Approx(1.0).epsilon(1e-6));

    const Tensor r = random_tensor({3, 3, 4}, 1);
    const TensorD ref = reference::self_affinity(tensor_cast<double>(r));
    CHECK(testutil::max_abs_diff(self_affinity(r), ref) < 1e-6);
}

TEST_CASE("propagation laws") {
    const Tensor attn = [] {
        Tensor a = random_tensor({6, 6}, 2);
        for (float& v : a.values()) v = std::abs(v);
        for (std::size_t i = 0; i < 6; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 6; ++j) s += a(i, j);
            for (std::size_t j = 0; j < 6; ++j) a(i, j) = static_cast<float>(a(i, j) / s);
        }
        return a;
    }();
    Tensor constant({2, 3, 2});
    for (std::size_t p = 0; p < 6; ++p) {
        constant[2 * p] = 2.f;
        constant[2 * p + 1] = -1.f;
    }
    CHECK(propagate(attn, constant) == constant);

    Tensor eye({6, 6});
    for (std::size_t i = 0; i < 6; ++i) eye(i, i) = 1.f;
    const Tensor flow = random_tensor({2, 3, 2}, 3, 10.0);
    CHECK(propagate(eye, flow) == flow);

    // Uniform attention over a 2x2 field with one outlier gives the field mean.
    const Tensor uniform({4, 4}, 0.25f);
    const Tensor outlier({2, 2, 2}, {0, 0, 0, 0, 4, -8, 0, 0});
    const Tensor mean = propagate(uniform, outlier);
    for (std::size_t p = 0; p < 4; ++p) {
        CHECK(mean[2 * p] == 1.f);
        CHECK(mean[2 * p + 1] == -2.f);
    }

    CHECK_THROWS_AS(propagate(Tensor({5, 5}), flow), DimensionError);
}

TEST_CASE("fused propagation equals the materialised path") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const std::size_t h = 1 + seed % 5, w = 3 + seed % 4;
        const Tensor f1 = random_tensor({h, w, 6}, seed);
        const Tensor raw = random_tensor({h, w, 2}, 100 + seed, 3.0);
        MatchOptions o;
        o.kernel.block = 2 + seed;
        const PropagationResult full = propagation(f1, raw, o);
        CHECK(propagate_flow(f1, raw, o) == full.flow_prop);
        const TensorD ref = reference::propagate(reference::self_affinity(tensor_cast<double>(f1)), tensor_cast<double>(raw));
        CHECK(testutil::max_abs_diff(full.flow_prop, ref) < 1e-5);
    }
}

TEST_CASE("propagation runs are counted and capped") {
    const Tensor f = random_tensor({3, 3, 4}, 5);
    const Tensor raw({3, 3, 2});
    const auto before = instrumentation::thread_counts();
    propagate_flow(f, raw);
    CHECK((instrumentation::thread_counts() - before).propagation == 1);
    MatchOptions o;
    o.correlation_cap_cells = 8;
    CHECK_THROWS_AS(propagate_flow(f, raw, o), ResourceError);
}
