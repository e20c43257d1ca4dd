#include "flowmatch/fusion.hpp"

#include <cmath>
#include <random>
#include <string>

namespace flowmatch {

namespace {

void check_layer(const ConvLayer& l, const std::string& name) {
    if (l.weight.rank() != 4 || l.weight.dim(0) != l.weight.dim(1) || l.weight.dim(0) % 2 == 0) {
        throw ConfigError(name + ".weight must be an odd square kh x kw x cin x cout kernel, got " +
                          shape_string(l.weight.shape()));
    }
    if (l.bias.rank() != 1 || l.bias.dim(0) != l.out_channels()) {
        throw ConfigError(name + ".bias must have " + std::to_string(l.out_channels()) + " values, got " +
                          shape_string(l.bias.shape()));
    }
    if (!l.weight.all_finite() || !l.bias.all_finite()) throw ConfigError(name + " holds non-finite values");
}

Tensor apply(const ConvLayer& l, const Tensor& x, const ConvGeometry& geom) {
    Tensor y = conv2d(x, l.weight, geom);
    add_bias_lastdim(y, l.bias);
    return y;
}

Tensor apply_same(const ConvLayer& l, const Tensor& x) {
    const std::size_t pad = l.kernel() / 2;
    return apply(l, x, ConvGeometry::symmetric(1, pad));
}

ConvLayer random_layer(std::size_t k, std::size_t cin, std::size_t cout, std::mt19937_64& rng, double gain = 1.0) {
    ConvLayer l{Tensor({k, k, cin, cout}), Tensor({cout})};
    std::normal_distribution<double> g(0.0, gain / std::sqrt(static_cast<double>(k * k * cin)));
    for (float& v : l.weight.values()) v = static_cast<float>(g(rng));
    std::normal_distribution<double> gb(0.0, 0.01);
    for (float& v : l.bias.values()) v = static_cast<float>(gb(rng));
    return l;
}

ConvLayer zero_layer(std::size_t k, std::size_t cin, std::size_t cout) {
    return {Tensor({k, k, cin, cout}), Tensor({cout})};
}

}  // namespace

void FusionWeights::validate() const {
    if (projection.empty()) throw ConfigError("proj: at least one projection layer is required");
    for (std::size_t i = 0; i < projection.size(); ++i) {
        const std::string name = "proj." + std::to_string(i);
        check_layer(projection[i], name);
        if (i > 0 && projection[i].in_channels() != projection[i - 1].out_channels()) {
            throw ConfigError(name + ".weight expects " + std::to_string(projection[i].in_channels()) +
                              " input channels but proj." + std::to_string(i - 1) + " produces " +
                              std::to_string(projection[i - 1].out_channels()));
        }
    }
    check_layer(input, "fusion.input");
    if (input.kernel() != 1) throw ConfigError("fusion.input.weight must be a 1x1 kernel");
    if (input.in_channels() <= projection_channels()) {
        throw ConfigError("fusion.input.weight has " + std::to_string(input.in_channels()) +
                          " input channels, not enough for the projected depth width " +
                          std::to_string(projection_channels()));
    }
    const std::size_t d = output_channels();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string name = "fusion.block." + std::to_string(b);
        check_layer(blocks[b].first, name + ".conv1");
        check_layer(blocks[b].second, name + ".conv2");
        if (blocks[b].first.in_channels() != d || blocks[b].second.out_channels() != d ||
            blocks[b].first.out_channels() != blocks[b].second.in_channels()) {
            throw ConfigError(name + " does not preserve the fusion width " + std::to_string(d));
        }
    }
}

FusionWeights FusionWeights::random(std::size_t semantic_channels, std::size_t depth_channels,
                                    std::size_t output_channels, std::uint64_t seed, std::size_t fusion_blocks) {
    std::mt19937_64 rng(seed);
    FusionWeights fw;
    // Projection width matches the semantic width.
    const std::size_t p = semantic_channels;
    fw.projection.push_back(random_layer(3, depth_channels, p, rng));
    fw.projection.push_back(random_layer(3, p, p, rng));
    fw.projection.push_back(random_layer(1, p, p, rng));
    fw.input = random_layer(1, semantic_channels + p, output_channels, rng);
    for (std::size_t b = 0; b < fusion_blocks; ++b) {
        fw.blocks.push_back({random_layer(3, output_channels, output_channels, rng),
                             random_layer(3, output_channels, output_channels, rng, 0.1)});
    }
    fw.validate();
    return fw;
}

FusionWeights FusionWeights::identity(std::size_t semantic_channels, std::size_t depth_channels) {
    FusionWeights fw;
    fw.projection.push_back(zero_layer(3, depth_channels, 1));
    fw.input = zero_layer(1, semantic_channels + 1, semantic_channels);
    for (std::size_t c = 0; c < semantic_channels; ++c) fw.input.weight[c * semantic_channels + c] = 1.0f;
    fw.validate();
    return fw;
}

std::vector<std::size_t> projection_strides(const FusionWeights& weights, std::uint32_t depth_stride,
                                            std::uint32_t target_stride) {
    if (depth_stride == 0 || target_stride % depth_stride != 0) {
        throw ConfigError("incompatible stride ratio: depth stride " + std::to_string(depth_stride) +
                          " does not divide target stride " + std::to_string(target_stride));
    }
    std::size_t remaining = target_stride / depth_stride;
    std::vector<std::size_t> strides(weights.projection.size(), 1);
    std::vector<std::size_t> spatial;
    for (std::size_t i = 0; i < weights.projection.size(); ++i) {
        if (weights.projection[i].kernel() > 1) spatial.push_back(i);
    }
    for (std::size_t s = 0; s < spatial.size() && remaining > 1; ++s) {
        const std::size_t k = weights.projection[spatial[s]].kernel();
        // Largest divisor of what is left that the kernel can cover (stride <= kernel).
        std::size_t best = 1;
        for (std::size_t d = 2; d <= std::min(k, remaining); ++d) {
            if (remaining % d == 0) best = d;
        }
        strides[spatial[s]] = best;
        remaining /= best;
    }
    if (remaining != 1) {
        throw ConfigError("incompatible stride ratio: downsampling by " + std::to_string(target_stride / depth_stride) +
                          " cannot be realised by the projection's spatial layers");
    }
    return strides;
}

Tensor project_depth(const FeatureRecord& depth, const FusionWeights& weights, const ProjectionTarget& target) {
    if (depth.source == FeatureSource::Dino) throw ConfigError("project_depth: record is a DINO feature map");
    if (depth.c() != weights.depth_channels()) {
        throw ConfigError("proj.0.weight expects " + std::to_string(weights.depth_channels()) +
                          " depth channels, record has " + std::to_string(depth.c()));
    }
    const auto strides = projection_strides(weights, depth.stride, target.stride);
    Tensor x = depth.data;
    const std::size_t last = weights.projection.size() - 1;
    for (std::size_t i = 0; i < weights.projection.size(); ++i) {
        const ConvLayer& l = weights.projection[i];
        const std::size_t k = l.kernel();
        // Shape law of the chain: each stride-s layer maps extent n to ceil(n / s).
        const ConvGeometry gh = ConvGeometry::same(k, strides[i], x.dim(0));
        const ConvGeometry gw = ConvGeometry::same(k, strides[i], x.dim(1));
        if (gh.pad_begin != gw.pad_begin || gh.pad_end != gw.pad_end) {
            // Pad each axis independently by padding the tensor explicitly first.
            const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
            Tensor padded({h + gh.pad_begin + gh.pad_end, w + gw.pad_begin + gw.pad_end, c});
            for (std::size_t y = 0; y < h; ++y) {
                std::copy_n(x.data() + y * w * c, w * c,
                            padded.data() + ((y + gh.pad_begin) * padded.dim(1) + gw.pad_begin) * c);
            }
            x = apply(l, padded, ConvGeometry{strides[i], 0, 0});
        } else {
            x = apply(l, x, gh);
        }
        if (k > 1 && i != last) gelu_inplace(x);
    }
    if (x.dim(0) != target.h || x.dim(1) != target.w) {
        throw ConfigError("projected depth grid " + std::to_string(x.dim(0)) + "x" + std::to_string(x.dim(1)) +
                          " does not match the semantic grid " + std::to_string(target.h) + "x" +
                          std::to_string(target.w));
    }
    require_finite(x, "project_depth");
    return x;
}

Tensor fuse(const Tensor& semantic, const Tensor& depth_projected, const FusionWeights& weights) {
    if (semantic.rank() != 3 || depth_projected.rank() != 3 || semantic.dim(0) != depth_projected.dim(0) ||
        semantic.dim(1) != depth_projected.dim(1)) {
        throw DimensionError("fuse: spatial extents differ " + shape_string(semantic.shape()) + " vs " +
                             shape_string(depth_projected.shape()));
    }
    if (semantic.dim(2) + depth_projected.dim(2) != weights.input.in_channels()) {
        throw ConfigError("fusion.input.weight expects " + std::to_string(weights.input.in_channels()) +
                          " channels, concatenation has " + std::to_string(semantic.dim(2) + depth_projected.dim(2)));
    }
    Tensor x = apply(weights.input, concat_lastdim(semantic, depth_projected), ConvGeometry{});
    for (const ResidualBlock& b : weights.blocks) {
        Tensor r = apply_same(b.first, x);
        gelu_inplace(r);
        r = apply_same(b.second, r);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += r[i];
    }
    require_finite(x, "fuse");
    return x;
}

FusedFeatures fuse_pair(const FramePairBundle& bundle, const FusionWeights& weights, bool enabled) {
    FusedFeatures out;
    Tensor* slots[2] = {&out.f1_hat, &out.f2_hat};
    for (int f = 0; f < 2; ++f) {
        const FeatureRecord& sem = bundle.semantic[f];
        if (sem.c() != weights.semantic_channels()) {
            throw ConfigError("fusion.input.weight expects " + std::to_string(weights.semantic_channels()) +
                              " semantic channels, record has " + std::to_string(sem.c()));
        }
        Tensor depth_proj;
        if (enabled) {
            depth_proj = project_depth(bundle.depth[f], weights, {sem.h(), sem.w(), sem.stride});
        } else {
            depth_proj = Tensor({sem.h(), sem.w(), weights.projection_channels()});
        }
        *slots[f] = fuse(sem.data, depth_proj, weights);
    }
    return out;
}

}  // namespace flowmatch
