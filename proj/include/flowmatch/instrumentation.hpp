#pragma once

#include <cstdint>

namespace flowmatch::instrumentation {

/// Per-thread execution counters for the single-pass stages.
struct StageCounts {
    std::uint64_t matcher = 0;
    std::uint64_t propagation = 0;

    friend StageCounts operator-(const StageCounts& a, const StageCounts& b) {
        return {a.matcher - b.matcher, a.propagation - b.propagation};
    }
};

/// Counts accumulated on the calling thread since it started.
StageCounts thread_counts();

void count_matcher();
void count_propagation();

}  // namespace flowmatch::instrumentation
