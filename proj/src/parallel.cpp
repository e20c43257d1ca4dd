#include "flowmatch/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flowmatch::parallel {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_max_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(n < 1 ? 1 : n);
#else
    (void)n;
#endif
}

std::optional<int> configure_from_env() {
    const char* raw = std::getenv("FLOWMATCH_THREADS");
    if (raw == nullptr || *raw == '\0') return std::nullopt;
    try {
        std::size_t used = 0;
        int n = std::stoi(raw, &used);
        if (used != std::string(raw).size() || n < 1) return std::nullopt;
        if (n < max_threads()) set_max_threads(n);
        return n;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace flowmatch::parallel
