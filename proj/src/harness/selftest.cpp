#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>
#include <stdexcept>

#include "flowmatch/features.hpp"
#include "flowmatch/flow_io.hpp"
#include "flowmatch/harness.hpp"
#include "flowmatch/kernels.hpp"
#include "flowmatch/loss.hpp"
#include "flowmatch/matcher.hpp"
#include "flowmatch/pipeline.hpp"
#include "flowmatch/propagation.hpp"
#include "flowmatch/reference.hpp"

namespace flowmatch::harness {

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> g(0.0, scale);
    for (float& v : t.values()) v = static_cast<float>(g(rng));
    return t;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double max_abs_diff(const Tensor& a, const TensorD& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
    return m;
}

std::string describe(double value, double tol) {
    std::ostringstream s;
    s << "max " << value << " (tol " << tol << ")";
    return s.str();
}

SuiteResult oracle_equivalence(const SelftestArgs&) {
    std::mt19937_64 rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t h = pick(rng, 1, 8);
        const std::size_t w = pick(rng, 1, 64 / h);
        const std::size_t d = pick(rng, 2, 32);
        const Tensor f1 = random_tensor({h, w, d}, rng);
        const Tensor f2 = random_tensor({h, w, d}, rng);
        MatchOptions opts;
        opts.kernel.block = pick(rng, 1, 16);

        const Tensor raw = match_flow(f1, f2, opts);
        const Tensor prop = propagate_flow(f1, raw, opts);
        const TensorD f1d = tensor_cast<double>(f1);
        const TensorD raw_ref = reference::match_flow(f1d, tensor_cast<double>(f2));
        const TensorD prop_ref = reference::propagate(reference::self_affinity(f1d), tensor_cast<double>(raw));
        worst = std::max({worst, max_abs_diff(raw, raw_ref), max_abs_diff(prop, prop_ref)});
    }
    return {"oracle-equivalence", worst < 1e-5, describe(worst, 1e-5)};
}

SuiteResult shift_recovery(const SelftestArgs&) {
    constexpr std::size_t n = 16;
    PipelineConfig cfg;
    cfg.interaction_blocks = 0;
    cfg.feature_dim = n * n;
    ModelWeights weights;
    weights.fusion = FusionWeights::identity(n * n, 4);

    double worst_cells = 0.0, worst_px = 0.0;
    for (int dy = -3; dy <= 3; ++dy) {
        for (int dx = -3; dx <= 3; ++dx) {
            SynthOptions so;
            so.h = so.w = n;
            so.c = n * n;
            so.dx = dx;
            so.dy = dy;
            so.sharpness = 50.0;
            const FramePairBundle bundle = synth_shifted_pair(so);
            const InferResult r = infer(bundle, weights, cfg);

            auto inside = [&](long y, long x) {
                return x + dx >= 0 && x + dx < long(n) && y + dy >= 0 && y + dy < long(n);
            };
            for (std::size_t y = 0; y < n; ++y) {
                for (std::size_t x = 0; x < n; ++x) {
                    if (!inside(long(y), long(x))) continue;
                    for (const Tensor* f : {&r.flow_raw, &r.flow_prop}) {
                        worst_cells = std::max({worst_cells, std::abs(double((*f)(y, x, 0)) - dx),
                                                std::abs(double((*f)(y, x, 1)) - dy)});
                    }
                }
            }
            // Pixels whose bilinear support lies entirely on non-wrapping cells.
            for (std::size_t py = 0; py < 8 * n; ++py) {
                for (std::size_t px = 0; px < 8 * n; ++px) {
                    const double sy = std::max(0.0, (py + 0.5) / 8.0 - 0.5);
                    const double sx = std::max(0.0, (px + 0.5) / 8.0 - 0.5);
                    const long y0 = long(sy), x0 = long(sx);
                    const long y1 = std::min<long>(y0 + 1, n - 1), x1 = std::min<long>(x0 + 1, n - 1);
                    if (!inside(y0, x0) || !inside(y0, x1) || !inside(y1, x0) || !inside(y1, x1)) continue;
                    worst_px = std::max({worst_px, std::abs(r.flow.u(py, px) - 8.0 * dx),
                                         std::abs(r.flow.v(py, px) - 8.0 * dy)});
                }
            }
        }
    }
    std::ostringstream s;
    s << "cells " << worst_cells << " (tol 0.01), px " << worst_px << " (tol 0.1)";
    return {"shift-recovery", worst_cells < 0.01 && worst_px < 0.1, s.str()};
}

double worst_row_sum_error(const Tensor& probs) {
    const std::size_t cols = probs.dim(1);
    double worst = 0.0;
    for (std::size_t i = 0; i < probs.dim(0); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) sum += probs(i, j);
        const double err = std::abs(sum - 1.0);
        worst = std::isfinite(err) ? std::max(worst, err) : INFINITY;
    }
    return worst;
}

SuiteResult normalization(const SelftestArgs& args) {
    const RowSoftmax softmax = args.softmax ? args.softmax : [](float* row, std::size_t n) {
        detail::softmax_row(row, n);
    };
    std::mt19937_64 rng(23);
    double worst = 0.0;
    for (double scale : {0.01, 1.0, 10.0, 100.0, 1000.0}) {
        for (int trial = 0; trial < 8; ++trial) {
            const std::size_t h = pick(rng, 1, 8), w = pick(rng, 1, 8), d = pick(rng, 1, 24);
            const Tensor f1 = random_tensor({h, w, d}, rng, scale);
            const Tensor f2 = random_tensor({h, w, d}, rng, scale);

            for (Tensor probs : {correlation(f1, f2), correlation(f1, f1)}) {
                const std::size_t cols = probs.dim(1);
                for (std::size_t i = 0; i < probs.dim(0); ++i) softmax(probs.data() + i * cols, cols);
                worst = std::max(worst, worst_row_sum_error(probs));
            }
            worst = std::max({worst, worst_row_sum_error(global_match(f1, f2).match),
                              worst_row_sum_error(self_affinity(f1))});
        }
    }
    return {"normalization", worst <= 1e-6, describe(worst, 1e-6)};
}

SuiteResult propagation_laws(const SelftestArgs&) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst_bound = 0.0, worst_fixed = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t h = pick(rng, 1, 8), w = pick(rng, 1, 8), n = h * w;
        Tensor attn({n, n});
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) sum += attn(i, j) = static_cast<float>(std::pow(unit(rng), 4));
            for (std::size_t j = 0; j < n; ++j) attn(i, j) = static_cast<float>(attn(i, j) / sum);
        }
        const Tensor flow = random_tensor({h, w, 2}, rng, 20.0);
        const Tensor out = propagate(attn, flow);
        for (std::size_t c = 0; c < 2; ++c) {
            float lo = INFINITY, hi = -INFINITY;
            for (std::size_t p = 0; p < n; ++p) {
                lo = std::min(lo, flow[2 * p + c]);
                hi = std::max(hi, flow[2 * p + c]);
            }
            for (std::size_t p = 0; p < n; ++p) {
                const double v = out[2 * p + c];
                worst_bound = std::max({worst_bound, lo - v, v - hi});
            }
        }
        Tensor constant({h, w, 2});
        const float cu = static_cast<float>(unit(rng) * 100 - 50), cv = static_cast<float>(unit(rng) * 100 - 50);
        for (std::size_t p = 0; p < n; ++p) {
            constant[2 * p] = cu;
            constant[2 * p + 1] = cv;
        }
        const Tensor fixed = propagate(attn, constant);
        for (std::size_t p = 0; p < n; ++p) {
            worst_fixed = std::max({worst_fixed, std::abs(double(fixed[2 * p]) - cu),
                                    std::abs(double(fixed[2 * p + 1]) - cv)});
        }
    }
    std::ostringstream s;
    s << "hull excess " << worst_bound << ", fixed-point drift " << worst_fixed << " (tol 1e-6)";
    return {"propagation-laws", worst_bound <= 1e-6 && worst_fixed <= 1e-6, s.str()};
}

SuiteResult gradcheck(const SelftestArgs&) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        const std::size_t h = pick(rng, 1, 6), w = pick(rng, 1, 36 / h), d = pick(rng, 2, 6);
        const TensorD f1 = tensor_cast<double>(random_tensor({h, w, d}, rng));
        const TensorD f2 = tensor_cast<double>(random_tensor({h, w, d}, rng));
        const TensorD gt = tensor_cast<double>(random_tensor({h, w, 2}, rng, 2.0));
        worst = std::max(worst, gradcheck_matching_chain(f1, f2, gt, 1e-4).max_rel_err);
    }
    return {"gradcheck", worst < 1e-4, describe(worst, 1e-4)};
}

SuiteResult codec(const SelftestArgs&) {
    std::mt19937_64 rng(47);
    std::vector<std::string> failures;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t h = pick(rng, 1, 12), w = pick(rng, 1, 12);
        FlowField f(random_tensor({h, w, 2}, rng, 50.0));
        const FlowField back = decode_flo(encode_flo(f));
        if (std::memcmp(back.data.data(), f.data.data(), f.data.size() * sizeof(float)) != 0 || back.valid) {
            failures.push_back(".flo round-trip");
            break;
        }
    }

    const auto png = std::filesystem::temp_directory_path() /
                     ("flowmatch-selftest-" + std::to_string(std::random_device{}()) + ".png");
    double worst_png = 0.0;
    bool mask_ok = true;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t h = pick(rng, 1, 16), w = pick(rng, 1, 16);
        FlowField f(random_tensor({h, w, 2}, rng, 100.0), std::vector<std::uint8_t>(h * w));
        for (auto& m : *f.valid) m = pick(rng, 0, 3) != 0;
        write_kitti_png(f, png);
        const FlowField back = read_kitti_png(png);
        for (std::size_t p = 0; p < h * w; ++p) {
            mask_ok = mask_ok && back.is_valid(p) == f.is_valid(p);
            if (!f.is_valid(p)) continue;
            for (std::size_t c = 0; c < 2; ++c) {
                worst_png = std::max(worst_png, std::abs(double(back.data[2 * p + c]) - f.data[2 * p + c]));
            }
        }
    }
    std::filesystem::remove(png);
    if (worst_png > 1.0 / 128.0) failures.push_back("KITTI value error " + std::to_string(worst_png));
    if (!mask_ok) failures.push_back("KITTI mask");

    SynthOptions so;
    so.mode = SynthMode::Random;
    const FramePairBundle b = synth_shifted_pair(so);
    for (const FeatureRecord* rec : {&b.semantic[0], &b.depth[1]}) {
        if (!(decode_ftx(encode_ftx(*rec)).data == rec->data)) failures.push_back("FTX round-trip");
    }

    std::string detail = failures.empty() ? "flo, KITTI png, ftx" : failures.front();
    return {"codec", failures.empty(), detail};
}

using Suite = SuiteResult (*)(const SelftestArgs&);

const std::vector<std::pair<std::string, Suite>>& suites() {
    static const std::vector<std::pair<std::string, Suite>> all = {
        {"oracle-equivalence", oracle_equivalence},
        {"shift-recovery", shift_recovery},
        {"normalization", normalization},
        {"propagation-laws", propagation_laws},
        {"gradcheck", gradcheck},
        {"codec", codec},
    };
    return all;
}

}  // namespace

const std::vector<std::string>& selftest_suite_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& s : suites()) out.push_back(s.first);
        return out;
    }();
    return names;
}

std::vector<SuiteResult> run_selftest(const SelftestArgs& args) {
    if (args.filter) {
        const auto& names = selftest_suite_names();
        if (std::find(names.begin(), names.end(), *args.filter) == names.end()) {
            throw std::invalid_argument("unknown selftest suite '" + *args.filter + "'");
        }
    }
    std::vector<SuiteResult> results;
    for (const auto& [name, suite] : suites()) {
        if (args.filter && *args.filter != name) continue;
        try {
            results.push_back(suite(args));
        } catch (const std::exception& e) {
            results.push_back({name, false, std::string("threw: ") + e.what()});
        }
    }
    return results;
}

}  // namespace flowmatch::harness
