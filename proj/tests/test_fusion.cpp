#include <doctest.h>

#include <cmath>

#include "flowmatch/fusion.hpp"
#include "flowmatch/reference.hpp"
#include "test_util.hpp"

using namespace flowmatch;
using testutil::random_tensor;

namespace {

FeatureRecord depth_record(std::size_t h, std::size_t w, std::size_t c, std::uint32_t stride, std::uint64_t seed) {
    FeatureRecord r;
    r.source = FeatureSource::Depth;
    r.stride = stride;
    r.image_h = static_cast<std::uint32_t>(h * stride);
    r.image_w = static_cast<std::uint32_t>(w * stride);
    r.data = random_tensor({h, w, c}, seed);
    return r;
}

ConvLayer identity_1x1(std::size_t c) {
    ConvLayer l{Tensor({1, 1, c, c}), Tensor({c})};
    for (std::size_t i = 0; i < c; ++i) l.weight[i * c + i] = 1.f;
    return l;
}

TensorD gelu(TensorD x) {
    for (double& v : x.values()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    return x;
}

TensorD conv_bias(const TensorD& x, const ConvLayer& l, const ConvGeometry& g) {
    TensorD y = reference::conv2d(x, tensor_cast<double>(l.weight), g);
    const std::size_t c = l.out_channels();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += l.bias[i % c];
    return y;
}

}  // namespace

TEST_CASE("projection stride allocation") {
    const FusionWeights w = FusionWeights::random(8, 4, 16, 1);
    CHECK(projection_strides(w, 8, 8) == std::vector<std::size_t>{1, 1, 1});
    CHECK(projection_strides(w, 4, 8) == std::vector<std::size_t>{2, 1, 1});
    CHECK(projection_strides(w, 2, 8) == std::vector<std::size_t>{2, 2, 1});
    CHECK_THROWS_AS(projection_strides(w, 1, 8), ConfigError);
    CHECK(projection_strides(w, 1, 9) == std::vector<std::size_t>{3, 3, 1});
    CHECK_THROWS_AS(projection_strides(w, 3, 8), ConfigError);
    CHECK_THROWS_AS(projection_strides(w, 1, 16), ConfigError);
}

TEST_CASE("identity 1x1 projection at equal resolution") {
    FusionWeights w;
    w.projection = {identity_1x1(3)};
    w.input = ConvLayer{Tensor({1, 1, 5, 2}), Tensor({2})};
    const FeatureRecord d = depth_record(4, 5, 3, 8, 1);
    CHECK(project_depth(d, w, {4, 5, 8}) == d.data);
}

TEST_CASE("stride-2 projection halves the grid") {
    const FusionWeights w = FusionWeights::random(8, 4, 16, 2);
    const Tensor even = project_depth(depth_record(8, 6, 4, 4, 3), w, {4, 3, 8});
    CHECK(even.shape() == Shape{4, 3, w.projection_channels()});
    const Tensor odd = project_depth(depth_record(7, 5, 4, 4, 3), w, {4, 3, 8});
    CHECK(odd.shape() == Shape{4, 3, w.projection_channels()});
    CHECK_THROWS_AS(project_depth(depth_record(8, 6, 4, 4, 3), w, {5, 3, 8}), ConfigError);
    CHECK_THROWS_AS(project_depth(depth_record(8, 6, 3, 4, 3), w, {4, 3, 8}), ConfigError);
}

TEST_CASE("projection matches a double-precision conv chain") {
    const FusionWeights w = FusionWeights::random(8, 4, 16, 5);
    const FeatureRecord d = depth_record(8, 10, 4, 4, 6);
    const Tensor got = project_depth(d, w, {4, 5, 8});

    TensorD x = tensor_cast<double>(d.data);
    x = gelu(conv_bias(x, w.projection[0], ConvGeometry::same(3, 2, 8)));
    x = conv_bias(x, w.projection[1], ConvGeometry::symmetric(1, 1));
    x = gelu(x);
    x = conv_bias(x, w.projection[2], ConvGeometry{});
    CHECK(testutil::max_abs_diff(got, x) < 1e-5);
}

TEST_CASE("fusion with identity weights passes semantic features") {
    const FusionWeights w = FusionWeights::identity(6, 3);
    const Tensor sem = random_tensor({3, 4, 6}, 7);
    CHECK(fuse(sem, Tensor({3, 4, 1}), w) == sem);
    CHECK_THROWS_AS(fuse(sem, Tensor({3, 5, 1}), w), DimensionError);
    CHECK_THROWS_AS(fuse(sem, Tensor({3, 4, 2}), w), ConfigError);
}

TEST_CASE("fusion commutes with spatial transposition") {
    FusionWeights w = FusionWeights::random(5, 2, 6, 9);
    // Symmetrise every spatial kernel so that transposition maps it onto itself.
    for (ResidualBlock& b : w.blocks) {
        for (ConvLayer* l : {&b.first, &b.second}) {
            const std::size_t k = l->kernel(), cc = l->in_channels() * l->out_channels();
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < ky; ++kx) {
                    for (std::size_t i = 0; i < cc; ++i) l->weight[(kx * k + ky) * cc + i] = l->weight[(ky * k + kx) * cc + i];
                }
            }
        }
    }
    auto transpose = [](const Tensor& t) {
        Tensor o({t.dim(1), t.dim(0), t.dim(2)});
        for (std::size_t y = 0; y < t.dim(0); ++y) {
            for (std::size_t x = 0; x < t.dim(1); ++x) {
                for (std::size_t c = 0; c < t.dim(2); ++c) o(x, y, c) = t(y, x, c);
            }
        }
        return o;
    };
    const Tensor sem = random_tensor({5, 7, 5}, 10);
    const Tensor dep = random_tensor({5, 7, w.projection_channels()}, 11);
    const Tensor a = transpose(fuse(sem, dep, w));
    const Tensor b = fuse(transpose(sem), transpose(dep), w);
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, double(std::abs(a[i] - b[i])));
    CHECK(worst < 1e-5);
}

TEST_CASE("fusion bypass ignores depth") {
    SynthOptions o;
    o.mode = SynthMode::Random;
    o.c = 12;
    FramePairBundle b = synth_shifted_pair(o);
    const FusionWeights w = FusionWeights::random(12, 4, 16, 3);
    const FusedFeatures off = fuse_pair(b, w, false);

    FramePairBundle changed = b;
    for (auto& rec : changed.depth) {
        for (float& v : rec.data.values()) v = 1e6f;
    }
    const FusedFeatures off2 = fuse_pair(changed, w, false);
    CHECK(off2.f1_hat == off.f1_hat);
    CHECK(off2.f2_hat == off.f2_hat);
    CHECK_FALSE(fuse_pair(b, w, true).f1_hat == off.f1_hat);

    // Zero projection weights make the depth path contribute zeros.
    FusionWeights zero = w;
    for (ConvLayer& l : zero.projection) {
        for (float& v : l.weight.values()) v = 0.f;
        for (float& v : l.bias.values()) v = 0.f;
    }
    CHECK(fuse_pair(b, zero, true).f1_hat == fuse_pair(b, zero, false).f1_hat);
}

TEST_CASE("fusion weight validation names the parameter") {
    FusionWeights w = FusionWeights::random(8, 4, 16, 1);
    w.projection[1].bias = Tensor({3});
    CHECK_THROWS_WITH_AS(w.validate(), doctest::Contains("proj.1.bias"), ConfigError);
}
