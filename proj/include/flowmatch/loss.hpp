#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "flowmatch/flow_field.hpp"
#include "flowmatch/tensor.hpp"

namespace flowmatch {

struct PredictionLoss {
    double weight;  // gamma^(N - i)
    double raw;     // mean over valid pixels of |du| + |dv|
};

struct LossReport {
    double total = 0.0;
    std::vector<PredictionLoss> per_prediction;
    std::size_t n = 0;
};

/// Weighted multi-prediction L1 loss. Predictions are ordered first to final;
/// the final one has weight 1. A pixel counts when it is valid in `gt` and in
/// `valid_mask` (if given). Throws UndefinedMetricError when none count.
LossReport flow_loss(std::span<const FlowField> preds, const FlowField& gt, double gamma,
                     const std::optional<std::vector<std::uint8_t>>& valid_mask = std::nullopt);

/// Loss and feature gradients of the interaction-free matching chain at
/// matching resolution, in double precision: correlation, softmax,
/// expectation, raw flow, self-affinity propagation and the two-prediction
/// L1 loss (raw flow weighted gamma, propagated flow weighted 1).
struct ChainGradient {
    double loss = 0.0;
    TensorD grad_f1;
    TensorD grad_f2;
};

double matching_chain_loss(const TensorD& f1, const TensorD& f2, const TensorD& gt, double gamma = 0.9);
ChainGradient matching_chain_gradient(const TensorD& f1, const TensorD& f2, const TensorD& gt, double gamma = 0.9);

/// Both predictions of the chain (raw, propagated), h x w x 2 each.
std::pair<TensorD, TensorD> matching_chain_predictions(const TensorD& f1, const TensorD& f2);

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    ChainGradient analytic;
    TensorD numeric_f1;
    TensorD numeric_f2;
};

/// Central-difference check of matching_chain_gradient. The relative error of
/// an entry is |a - n| / max(|a|, |n|, abs_floor). Requires h*w <= 36.
/// Throws NumericError on a non-finite gradient.
GradcheckReport gradcheck_matching_chain(const TensorD& f1, const TensorD& f2, const TensorD& gt, double eps,
                                         double gamma = 0.9, double abs_floor = 1e-6);

/// Central difference of matching_chain_loss along one coordinate of f1 (which == 0) or f2.
double central_difference(const TensorD& f1, const TensorD& f2, const TensorD& gt, int which, std::size_t index,
                          double eps, double gamma = 0.9);

}  // namespace flowmatch
