#pragma once

#include <optional>

namespace flowmatch::parallel {

/// Worker count used by the OpenMP kernels.
int max_threads();

/// Sets the worker count for subsequent kernel calls (values < 1 are clamped to 1).
void set_max_threads(int n);

/// Reads FLOWMATCH_THREADS; if set to a positive integer, caps the worker count to it.
/// Returns the parsed value, if any.
std::optional<int> configure_from_env();

/// Restores the previous worker count on scope exit.
class ThreadScope {
public:
    explicit ThreadScope(int n) : saved_(max_threads()) { set_max_threads(n); }
    ~ThreadScope() { set_max_threads(saved_); }
    ThreadScope(const ThreadScope&) = delete;
    ThreadScope& operator=(const ThreadScope&) = delete;

private:
    int saved_;
};

}  // namespace flowmatch::parallel
