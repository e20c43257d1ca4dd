#include "flowmatch/instrumentation.hpp"

namespace flowmatch::instrumentation {

namespace {
thread_local StageCounts counts;
}

StageCounts thread_counts() { return counts; }
void count_matcher() { ++counts.matcher; }
void count_propagation() { ++counts.propagation; }

}  // namespace flowmatch::instrumentation
