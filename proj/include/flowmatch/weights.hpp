#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowmatch/error.hpp"
#include "flowmatch/fusion.hpp"
#include "flowmatch/matcher.hpp"

namespace flowmatch {

/// Everything trainable: projection + fusion and the interaction encoder.
struct ModelWeights {
    FusionWeights fusion;
    InteractionWeights interaction;

    std::size_t feature_dim() const { return fusion.output_channels(); }
    void validate() const;

    static ModelWeights random(std::size_t semantic_channels, std::size_t depth_channels, std::size_t feature_dim,
                               std::size_t interaction_blocks, std::uint64_t seed);
};

/// A weight-file problem. Offset is the byte position for container-level faults.
class WeightFileError : public ConfigError {
public:
    WeightFileError(const std::string& what, std::size_t offset)
        : ConfigError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    explicit WeightFileError(const FormatError& e)
        : ConfigError(std::string("weight file: ") + e.what()), offset_(e.offset()) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

using NamedTensor = std::pair<std::string, Tensor>;

// FMW1 container (little endian):
//   "FMW1", u8 version = 1, u8[3] reserved = 0, u32 tensor count, then per tensor:
//   u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f32 payload, u32 CRC32 of payload.
inline constexpr std::uint8_t kWeightFileVersion = 1;

std::vector<std::uint8_t> encode_tensor_table(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_tensor_table(std::span<const std::uint8_t> bytes);

/// Canonical tensor names in file order (proj.*, fusion.*, interact.*).
std::vector<NamedTensor> to_tensor_table(const ModelWeights& weights);
/// Assembles and validates weights; ConfigError names the offending parameter.
ModelWeights from_tensor_table(const std::vector<NamedTensor>& table);

ModelWeights load_weights(const std::filesystem::path& path);
void save_weights(const ModelWeights& weights, const std::filesystem::path& path);

}  // namespace flowmatch
