#include "flowmatch/propagation.hpp"

#include <algorithm>

#include "flowmatch/instrumentation.hpp"

namespace flowmatch {

namespace {

void check_inputs(const Tensor& f1, const Tensor& flow) {
    if (f1.rank() != 3 || flow.rank() != 3 || flow.dim(2) != 2 || f1.dim(0) != flow.dim(0) ||
        f1.dim(1) != flow.dim(1)) {
        throw DimensionError("propagation: features " + shape_string(f1.shape()) + " and flow " +
                             shape_string(flow.shape()) + " disagree");
    }
}

}  // namespace

Tensor self_affinity(const Tensor& f1, const MatchOptions& opts) {
    return match_distribution(correlation(f1, f1, opts));
}

Tensor propagate(const Tensor& attn, const Tensor& flow_raw) {
    if (flow_raw.rank() != 3 || flow_raw.dim(2) != 2) throw DimensionError("propagate: flow must be h x w x 2");
    const std::size_t n = flow_raw.dim(0) * flow_raw.dim(1);
    if (attn.shape() != Shape{n, n}) {
        throw DimensionError("propagate: attention " + shape_string(attn.shape()) + " does not fit flow " +
                             shape_string(flow_raw.shape()));
    }
    Tensor out(flow_raw.shape());
    const std::size_t bs = 64;
    const auto tiles = static_cast<std::ptrdiff_t>((n + bs - 1) / bs);
#pragma omp parallel
    {
        std::vector<double> acc(2 * bs);
#pragma omp for schedule(static)
        for (std::ptrdiff_t t = 0; t < tiles; ++t) {
            const std::size_t r0 = static_cast<std::size_t>(t) * bs, r1 = std::min(r0 + bs, n);
            detail::weighted_rows(attn.data() + r0 * n, r1 - r0, n, flow_raw.data(), acc.data());
            for (std::size_t i = 0; i < 2 * (r1 - r0); ++i) out[2 * r0 + i] = static_cast<float>(acc[i]);
        }
    }
    require_finite(out, "propagate");
    return out;
}

PropagationResult propagation(const Tensor& f1, const Tensor& flow_raw, const MatchOptions& opts) {
    instrumentation::count_propagation();
    check_inputs(f1, flow_raw);
    PropagationResult r;
    r.attn = self_affinity(f1, opts);
    r.flow_prop = propagate(r.attn, flow_raw);
    return r;
}

Tensor propagate_flow(const Tensor& f1, const Tensor& flow_raw, const MatchOptions& opts) {
    instrumentation::count_propagation();
    check_inputs(f1, flow_raw);
    const std::size_t n = f1.dim(0) * f1.dim(1);
    check_correlation_cap(n, opts);
    const Tensor a = f1.reshaped({n, f1.dim(2)});
    const Tensor at = transpose2d(a);
    Tensor out(flow_raw.shape());
    const std::size_t bs = std::max<std::size_t>(1, opts.kernel.block);
    const auto tiles = static_cast<std::ptrdiff_t>((n + bs - 1) / bs);
#pragma omp parallel
    {
        std::vector<float> probs(bs * n);
        std::vector<double> acc(2 * bs);
#pragma omp for schedule(static)
        for (std::ptrdiff_t t = 0; t < tiles; ++t) {
            const std::size_t r0 = static_cast<std::size_t>(t) * bs, r1 = std::min(r0 + bs, n);
            detail::softmax_affinity_rows(a, at, r0, r1, probs.data(), opts.kernel);
            detail::weighted_rows(probs.data(), r1 - r0, n, flow_raw.data(), acc.data());
            for (std::size_t i = 0; i < 2 * (r1 - r0); ++i) out[2 * r0 + i] = static_cast<float>(acc[i]);
        }
    }
    require_finite(out, "propagate_flow");
    return out;
}

}  // namespace flowmatch
