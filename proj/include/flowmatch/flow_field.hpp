#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flowmatch/tensor.hpp"

namespace flowmatch {

/// Dense displacement field (H x W x 2, components u then v) with an optional validity mask.
struct FlowField {
    Tensor data;
    std::optional<std::vector<std::uint8_t>> valid;

    FlowField() = default;
    explicit FlowField(Tensor flow, std::optional<std::vector<std::uint8_t>> mask = std::nullopt);
    FlowField(std::size_t height, std::size_t width) : FlowField(Tensor({height, width, 2})) {}

    std::size_t height() const { return data.dim(0); }
    std::size_t width() const { return data.dim(1); }
    std::size_t pixels() const { return height() * width(); }

    float u(std::size_t y, std::size_t x) const { return data(y, x, 0); }
    float v(std::size_t y, std::size_t x) const { return data(y, x, 1); }
    bool is_valid(std::size_t index) const { return !valid || (*valid)[index] != 0; }
    std::size_t valid_count() const;

    friend bool operator==(const FlowField&, const FlowField&) = default;
};

}  // namespace flowmatch
