#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flowmatch/metrics.hpp"

namespace flowmatch::harness {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
    kOk = 0,
    kSelftestFailed = 1,
    kFormatError = 2,
    kConfigError = 3,
    kNoData = 4,
};

struct InferArgs {
    std::string pair_dir;
    std::string weights;
    std::string config;
    std::string out;
    std::optional<std::string> viz;
    std::optional<double> max_mag;
    std::optional<std::string> manifest;
};

struct EvalArgs {
    std::vector<std::string> pred;
    std::vector<std::string> gt;
    std::optional<std::string> manifest;
    std::optional<double> max_flow;
};

/// Row softmax used by the normalization suite; swappable for mutation testing.
using RowSoftmax = std::function<void(float*, std::size_t)>;

struct SelftestArgs {
    std::optional<std::string> filter;
    RowSoftmax softmax;  // empty: the library kernel
};

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

int cmd_infer(const InferArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_selftest(const SelftestArgs& args, std::ostream& out, std::ostream& err);

/// Parses argv (CLI11) and dispatches to the subcommands above.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

const std::vector<std::string>& selftest_suite_names();
/// Throws std::invalid_argument for an unknown filter.
std::vector<SuiteResult> run_selftest(const SelftestArgs& args);

/// Metric column names, in report order.
inline constexpr const char* kMetricColumns[5] = {"EPE", "s0-10", "s10-40", "s40+", "F1-all"};

}  // namespace flowmatch::harness
