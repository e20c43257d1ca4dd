#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "flowmatch/flow_field.hpp"

namespace flowmatch {

// Middlebury .flo: f32 202021.25 ("PIEH"), i32 width, i32 height, then
// interleaved (u, v) f32 values, all little endian.
inline constexpr float kFloMagic = 202021.25f;
/// Components with magnitude above this mark a pixel as unknown.
inline constexpr float kFloUnknownThreshold = 1e9f;

std::vector<std::uint8_t> encode_flo(const FlowField& field);
FlowField decode_flo(std::span<const std::uint8_t> bytes);
FlowField read_flo(const std::filesystem::path& path);
void write_flo(const FlowField& field, const std::filesystem::path& path);

// KITTI flow PNG: 16-bit RGB, u = (R - 2^15) / 64, v = (G - 2^15) / 64, valid = B > 0.
FlowField read_kitti_png(const std::filesystem::path& path);
void write_kitti_png(const FlowField& field, const std::filesystem::path& path);

/// Reads .flo or KITTI .png by file extension.
FlowField read_flow(const std::filesystem::path& path);

struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major RGB8

    std::array<std::uint8_t, 3> at(std::size_t y, std::size_t x) const {
        const std::size_t i = (y * width + x) * 3;
        return {pixels[i], pixels[i + 1], pixels[i + 2]};
    }
};

void write_png_rgb8(const RgbImage& image, const std::filesystem::path& path);

/// The 55-entry Middlebury color wheel (RY 15, YG 6, GC 4, CB 11, BM 13, MR 6).
const std::vector<std::array<std::uint8_t, 3>>& colorwheel();

/// Middlebury color coding. Saturation is min(|f| / max_mag, 1); max_mag
/// defaults to the 99th percentile of valid magnitudes. Unknown pixels are black.
RgbImage render_colorwheel(const FlowField& field, std::optional<double> max_mag = std::nullopt);

}  // namespace flowmatch
