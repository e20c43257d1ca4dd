#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>

#include "flowmatch/flow_field.hpp"

namespace flowmatch {

/// Ground-truth magnitude strata: [0,10), [10,40), [40,inf) pixels.
inline constexpr std::array<double, 2> kBucketEdges = {10.0, 40.0};
inline constexpr const char* kBucketNames[3] = {"s0-10", "s10-40", "s40+"};

struct EvalReport {
    double epe = 0.0;
    std::array<std::optional<double>, 3> bucket_epe{};  // empty when the bucket has no pixels
    double f1_all = 0.0;                                // percent
    std::size_t valid_count = 0;
    std::array<std::size_t, 3> bucket_counts{};
    std::size_t outliers = 0;

    // Raw sums, kept so reports can be combined pixel-weighted.
    double epe_sum = 0.0;
    std::array<double, 3> bucket_sums{};
};

struct EvalOptions {
    /// Pixels whose ground-truth magnitude is >= this are ignored. Off by default.
    std::optional<double> max_gt_magnitude;
};

/// Endpoint error, stratified EPE and F1-all over pixels valid in `gt`.
/// Outlier rule: error > 3 px and error > 5% of |gt|.
/// Throws DimensionError on extent mismatch and UndefinedMetricError with no valid pixels.
EvalReport epe(const FlowField& pred, const FlowField& gt, const EvalOptions& opts = {});

/// Pixel-weighted combination of several reports.
EvalReport aggregate(std::span<const EvalReport> reports);

std::size_t bucket_index(double gt_magnitude);

}  // namespace flowmatch
