#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "flowmatch/features.hpp"
#include "flowmatch/flow_field.hpp"
#include "flowmatch/instrumentation.hpp"
#include "flowmatch/matcher.hpp"
#include "flowmatch/weights.hpp"

namespace flowmatch {

enum class UpsampleMode { BilinearX8 };

struct PipelineConfig {
    bool fusion_enabled = true;
    std::size_t interaction_blocks = 1;
    bool deterministic = true;
    std::size_t correlation_cap = 160 * 96;  // matching-resolution cells
    UpsampleMode upsample_mode = UpsampleMode::BilinearX8;
    double gamma = 0.9;
    std::uint64_t seed = 0;
    /// Matching feature width D. 128 is a placeholder default, not a trained value.
    std::size_t feature_dim = 128;
    std::size_t block = 64;

    void validate() const;
    MatchOptions match_options() const;
};

/// `key = value` lines; '#' starts a comment. Unknown keys and malformed
/// values raise ConfigError. Missing keys keep their defaults.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
/// All fields in declaration order, parseable by parse_config.
std::string format_config(const PipelineConfig& cfg);

/// Bilinear resize to H x W, then u *= W / w and v *= H / h.
Tensor upsample_flow(const Tensor& flow_low, std::size_t height, std::size_t width);

struct StageTimings {
    double fusion_s = 0, interaction_s = 0, matching_s = 0, propagation_s = 0, upsample_s = 0;
};

struct InferResult {
    FlowField flow;           // propagated flow at image resolution, pixels
    FlowField flow_raw_full;  // matcher output at image resolution (intermediate prediction)
    Tensor flow_raw;          // matching resolution, cells
    Tensor flow_prop;         // matching resolution, cells
    instrumentation::StageCounts stage_counts;
    StageTimings timings;
};

/// Throws ConfigError when weights and config disagree.
void check_compatible(const ModelWeights& weights, const PipelineConfig& cfg);

/// One forward pass: fusion, interaction, matching, propagation, upsampling.
InferResult infer(const FramePairBundle& bundle, const ModelWeights& weights, const PipelineConfig& cfg);

}  // namespace flowmatch
