#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "flowmatch/kernels.hpp"
#include "flowmatch/tensor.hpp"

namespace flowmatch {

/// y = x W + b with W stored in x out.
struct Linear {
    Tensor weight;
    Tensor bias;
};

struct AttentionWeights {
    Linear query, key, value, output;
};

/// Self-attention within a frame, cross-attention to the other frame, feedforward.
struct InteractionBlock {
    AttentionWeights self_attn;
    AttentionWeights cross_attn;
    Linear ffn_in;
    Linear ffn_out;
};

struct InteractionWeights {
    std::vector<InteractionBlock> blocks;

    /// Throws ConfigError naming the first parameter inconsistent with `width`.
    void validate(std::size_t width) const;
    static InteractionWeights random(std::size_t width, std::size_t blocks, std::uint64_t seed,
                                     std::size_t ffn_multiplier = 2);
};

/// Matching-resolution controls.
struct MatchOptions {
    KernelOptions kernel{};
    /// Largest h*w for which an (hw) x (hw) correlation is formed. 160 x 96 cells by default.
    std::size_t correlation_cap_cells = 160 * 96;
};

/// Fixed sinusoidal 2-D encoding (h x w x d). The first d/2 channels encode y,
/// the rest x, as interleaved sin/cos pairs. d must be a multiple of 4.
Tensor positional_encoding(std::size_t h, std::size_t w, std::size_t d);

/// Cell-centre coordinates (x, y) of an h x w grid: grid(i, j) == (j, i).
Tensor coord_grid(std::size_t h, std::size_t w);

/// Transformer interaction over both frames with shared weights. The positional
/// encoding is added once before the first block; zero blocks return the inputs.
std::pair<Tensor, Tensor> interact(const Tensor& f1_hat, const Tensor& f2_hat, const InteractionWeights& weights,
                                   const KernelOptions& opts = {});

/// Flattened all-pairs correlation F1 F2^T / sqrt(D), (hw) x (hw), rows over (y, x).
Tensor correlation(const Tensor& f1, const Tensor& f2, const MatchOptions& opts = {});

/// Row-wise softmax of the correlation.
Tensor match_distribution(const Tensor& corr);

/// Expected target coordinate per cell and its offset from the cell (h x w x 2 each).
std::pair<Tensor, Tensor> expected_flow(const Tensor& match, const Tensor& grid);

struct MatchingResult {
    Tensor corr;
    Tensor match;
    Tensor expected;
    Tensor flow_raw;
};

/// Materialises every intermediate of the global matcher.
MatchingResult global_match(const Tensor& f1, const Tensor& f2, const MatchOptions& opts = {});

/// Same raw flow as global_match, computed over row tiles without keeping the
/// (hw) x (hw) matrices. Bit-identical to global_match(...).flow_raw.
Tensor match_flow(const Tensor& f1, const Tensor& f2, const MatchOptions& opts = {});

/// Throws ResourceError when h*w exceeds the configured cap.
void check_correlation_cap(std::size_t cells, const MatchOptions& opts);

namespace detail {

/// Rows [r0, r1) of softmax(a b / sqrt(d)) written into `out` ((r1 - r0) x n),
/// where a is m x d and `b_dn` is the d x n second operand (already transposed).
void softmax_affinity_rows(const Tensor& a, const Tensor& b_dn, std::size_t r0, std::size_t r1, float* out,
                           const KernelOptions& opts);

/// sum_j p_j v_j / sum_j p_j for each row of `probs` and each of the two
/// components of `values` (n x 2), in double.
void weighted_rows(const float* probs, std::size_t rows, std::size_t n, const float* values, double* out);

}  // namespace detail

}  // namespace flowmatch
