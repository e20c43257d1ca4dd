#pragma once

#include "flowmatch/matcher.hpp"
#include "flowmatch/tensor.hpp"

namespace flowmatch {

struct PropagationResult {
    Tensor attn;       // (hw) x (hw)
    Tensor flow_prop;  // h x w x 2
};

/// softmax(F1 F1^T / sqrt(D)) row-wise, (hw) x (hw).
Tensor self_affinity(const Tensor& f1, const MatchOptions& opts = {});

/// attn * flow per component. Each row is normalised by its own mass, so
/// constant fields are fixed points and outputs stay inside the input range.
Tensor propagate(const Tensor& attn, const Tensor& flow_raw);

/// Materialises the attention matrix.
PropagationResult propagation(const Tensor& f1, const Tensor& flow_raw, const MatchOptions& opts = {});

/// Same as propagation(...).flow_prop, over row tiles without keeping the
/// attention matrix. Bit-identical to the materialised path.
Tensor propagate_flow(const Tensor& f1, const Tensor& flow_raw, const MatchOptions& opts = {});

}  // namespace flowmatch
