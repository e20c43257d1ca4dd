#pragma once

#include <cstdint>
#include <vector>

#include "flowmatch/features.hpp"
#include "flowmatch/kernels.hpp"
#include "flowmatch/tensor.hpp"

namespace flowmatch {

/// One convolution: weight kh x kw x cin x cout, bias cout.
struct ConvLayer {
    Tensor weight;
    Tensor bias;

    std::size_t kernel() const { return weight.dim(0); }
    std::size_t in_channels() const { return weight.dim(2); }
    std::size_t out_channels() const { return weight.dim(3); }
};

/// conv -> GELU -> conv, added to the block input.
struct ResidualBlock {
    ConvLayer first;
    ConvLayer second;
};

/// Parameters of the depth projection and the cross-modal fusion network.
///
/// Projection layers with a spatial kernel (> 1) share the downsampling from
/// the depth grid to the semantic grid and, unless last, are followed by GELU; 1x1 layers
/// are linear channel mappers. Fusion maps concat(semantic, projected depth)
/// to the matching width with a 1x1 conv, then applies the residual blocks.
struct FusionWeights {
    std::vector<ConvLayer> projection;
    ConvLayer input;
    std::vector<ResidualBlock> blocks;

    std::size_t depth_channels() const { return projection.front().in_channels(); }
    std::size_t projection_channels() const { return projection.back().out_channels(); }
    std::size_t semantic_channels() const { return input.in_channels() - projection_channels(); }
    std::size_t output_channels() const { return input.out_channels(); }

    /// Throws ConfigError naming the first parameter that breaks the channel chain.
    void validate() const;

    /// Default architecture (3x3, 3x3, 1x1 projection; two residual blocks), seeded init.
    static FusionWeights random(std::size_t semantic_channels, std::size_t depth_channels, std::size_t output_channels,
                                std::uint64_t seed, std::size_t fusion_blocks = 2);

    /// Semantic channels pass through unchanged, depth is ignored. Needs
    /// output_channels == semantic_channels. No residual blocks.
    static FusionWeights identity(std::size_t semantic_channels, std::size_t depth_channels);
};

struct FusedFeatures {
    Tensor f1_hat;
    Tensor f2_hat;
};

/// Output grid the projection must land on.
struct ProjectionTarget {
    std::size_t h = 0;
    std::size_t w = 0;
    std::uint32_t stride = 8;
};

/// Per-layer strides that turn a depth grid of `depth_stride` into `target_stride`.
/// Throws ConfigError when the ratio is not an integer the spatial layers can realise.
std::vector<std::size_t> projection_strides(const FusionWeights& weights, std::uint32_t depth_stride,
                                            std::uint32_t target_stride);

Tensor project_depth(const FeatureRecord& depth, const FusionWeights& weights, const ProjectionTarget& target);

Tensor fuse(const Tensor& semantic, const Tensor& depth_projected, const FusionWeights& weights);

/// Both frames through projection and fusion. With `enabled` false the depth
/// records are not read: the projected depth slot is all zeros.
FusedFeatures fuse_pair(const FramePairBundle& bundle, const FusionWeights& weights, bool enabled);

}  // namespace flowmatch
