#include "flowmatch/flow_field.hpp"

#include <algorithm>

namespace flowmatch {

FlowField::FlowField(Tensor flow, std::optional<std::vector<std::uint8_t>> mask)
    : data(std::move(flow)), valid(std::move(mask)) {
    if (data.rank() != 3 || data.dim(2) != 2) {
        throw DimensionError("flow field must be H x W x 2, got " + shape_string(data.shape()));
    }
    if (valid && valid->size() != pixels()) {
        throw DimensionError("validity mask has " + std::to_string(valid->size()) + " entries for " +
                             std::to_string(pixels()) + " pixels");
    }
}

std::size_t FlowField::valid_count() const {
    if (!valid) return pixels();
    return static_cast<std::size_t>(std::count_if(valid->begin(), valid->end(), [](std::uint8_t m) { return m != 0; }));
}

}  // namespace flowmatch
