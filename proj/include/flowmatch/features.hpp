#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "flowmatch/flow_field.hpp"
#include "flowmatch/tensor.hpp"

namespace flowmatch {

enum class FeatureSource : std::uint8_t { Dino = 0, Depth = 1, Synthetic = 2 };

const char* to_string(FeatureSource s);

/// One backbone feature map for one frame, as exchanged in an FTX file.
struct FeatureRecord {
    FeatureSource source = FeatureSource::Synthetic;
    std::uint8_t frame_index = 1;
    std::uint32_t stride = 8;  // feature stride relative to the image
    std::uint32_t image_h = 0;
    std::uint32_t image_w = 0;
    Tensor data;               // h x w x c

    std::size_t h() const { return data.dim(0); }
    std::size_t w() const { return data.dim(1); }
    std::size_t c() const { return data.dim(2); }

    /// Throws DimensionError on violated record invariants (including the
    /// 1/8 grid law for DINO records).
    void validate() const;

    friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

// FTX layout (little endian):
//   0  "FTX1"            4  u8 version = 1     5  u8 source
//   6  u8 frame_index    7  u8 reserved = 0
//   8  u32 h, w, c, stride, image_h, image_w
//  32  h*w*c f32 values, row-major, channel-last
//      u32 CRC32 of the payload bytes
inline constexpr std::uint8_t kFtxVersion = 1;
inline constexpr std::size_t kFtxHeaderBytes = 32;

std::vector<std::uint8_t> encode_ftx(const FeatureRecord& rec);
/// Throws FormatError with the byte offset of the first inconsistency.
FeatureRecord decode_ftx(std::span<const std::uint8_t> bytes);

FeatureRecord read_ftx(const std::filesystem::path& path);
void write_ftx(const FeatureRecord& rec, const std::filesystem::path& path);

/// The four feature maps of one frame pair. Slot 0 is frame 1.
struct FramePairBundle {
    std::uint32_t image_h = 0;
    std::uint32_t image_w = 0;
    std::array<FeatureRecord, 2> semantic;
    std::array<FeatureRecord, 2> depth;
    std::optional<FlowField> ground_truth;       // image resolution, pixels
    std::optional<Tensor> ground_truth_cells;    // matching resolution, cells

    void validate() const;
};

// File names inside a bundle directory.
inline constexpr const char* kSemanticFiles[2] = {"dino_1.ftx", "dino_2.ftx"};
inline constexpr const char* kDepthFiles[2] = {"depth_1.ftx", "depth_2.ftx"};
inline constexpr const char* kGroundTruthFile = "flow_gt.flo";

/// Loads dino_{1,2}.ftx, depth_{1,2}.ftx and, if present, flow_gt.flo.
FramePairBundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const FramePairBundle& bundle, const std::filesystem::path& dir);

enum class SynthMode { OneHot, Random };

struct SynthOptions {
    std::size_t h = 8;
    std::size_t w = 8;
    std::size_t c = 64;
    int dx = 0;
    int dy = 0;
    /// Correlation margin of the true match: the matching logit equals
    /// `sharpness` and every other logit is 0 in one-hot mode.
    double sharpness = 50.0;
    SynthMode mode = SynthMode::OneHot;
    std::uint64_t seed = 0;
    std::size_t depth_channels = 4;
    std::size_t depth_upscale = 2;  // depth grid is this many times finer than the semantic grid
};

/// Frame-2 features are frame-1 features cyclically shifted by (dx, dy) cells,
/// so every cell's true correspondence is (x + dx, y + dy) modulo the grid.
FramePairBundle synth_shifted_pair(const SynthOptions& opts);

}  // namespace flowmatch
