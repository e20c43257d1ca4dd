#include "flowmatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace flowmatch {

namespace {

// Neumaier-compensated accumulator.
struct Sum {
    double s = 0.0, c = 0.0;
    void add(double x) {
        const double t = s + x;
        c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
        s = t;
    }
    double value() const { return s + c; }
};

struct Partial {
    Sum epe;
    std::array<Sum, 3> buckets;
    std::size_t count = 0;
    std::array<std::size_t, 3> bucket_counts{};
    std::size_t outliers = 0;
};

// Fixed chunking keeps the summation order independent of the worker count.
constexpr std::size_t kChunk = 4096;

void finalize(EvalReport& r) {
    r.epe = r.epe_sum / static_cast<double>(r.valid_count);
    for (std::size_t b = 0; b < 3; ++b) {
        r.bucket_epe[b] = r.bucket_counts[b] ? std::optional(r.bucket_sums[b] / static_cast<double>(r.bucket_counts[b]))
                                             : std::nullopt;
    }
    r.f1_all = 100.0 * static_cast<double>(r.outliers) / static_cast<double>(r.valid_count);
}

}  // namespace

std::size_t bucket_index(double m) {
    if (m < kBucketEdges[0]) return 0;
    if (m < kBucketEdges[1]) return 1;
    return 2;
}

EvalReport epe(const FlowField& pred, const FlowField& gt, const EvalOptions& opts) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        throw DimensionError("epe: prediction " + std::to_string(pred.height()) + "x" + std::to_string(pred.width()) +
                             " vs ground truth " + std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
    }
    const std::size_t n = gt.pixels();
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    std::vector<Partial> parts(chunks);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(chunks); ++ci) {
        Partial& part = parts[static_cast<std::size_t>(ci)];
        const std::size_t begin = static_cast<std::size_t>(ci) * kChunk;
        const std::size_t end = std::min(begin + kChunk, n);
        for (std::size_t p = begin; p < end; ++p) {
            if (!gt.is_valid(p)) continue;
            const double gu = gt.data[2 * p], gv = gt.data[2 * p + 1];
            const double mag = std::hypot(gu, gv);
            if (opts.max_gt_magnitude && mag >= *opts.max_gt_magnitude) continue;
            const double err = std::hypot(static_cast<double>(pred.data[2 * p]) - gu,
                                          static_cast<double>(pred.data[2 * p + 1]) - gv);
            const std::size_t b = bucket_index(mag);
            part.epe.add(err);
            part.buckets[b].add(err);
            ++part.count;
            ++part.bucket_counts[b];
            if (err > 3.0 && err > 0.05 * mag) ++part.outliers;
        }
    }

    EvalReport r;
    Sum total;
    std::array<Sum, 3> buckets;
    for (const Partial& part : parts) {
        total.add(part.epe.value());
        for (std::size_t b = 0; b < 3; ++b) {
            buckets[b].add(part.buckets[b].value());
            r.bucket_counts[b] += part.bucket_counts[b];
        }
        r.valid_count += part.count;
        r.outliers += part.outliers;
    }
    if (r.valid_count == 0) throw UndefinedMetricError("epe: no valid pixels");
    r.epe_sum = total.value();
    for (std::size_t b = 0; b < 3; ++b) r.bucket_sums[b] = buckets[b].value();
    finalize(r);
    return r;
}

EvalReport aggregate(std::span<const EvalReport> reports) {
    EvalReport r;
    Sum total;
    std::array<Sum, 3> buckets;
    for (const EvalReport& e : reports) {
        total.add(e.epe_sum);
        for (std::size_t b = 0; b < 3; ++b) {
            buckets[b].add(e.bucket_sums[b]);
            r.bucket_counts[b] += e.bucket_counts[b];
        }
        r.valid_count += e.valid_count;
        r.outliers += e.outliers;
    }
    if (r.valid_count == 0) throw UndefinedMetricError("aggregate: no valid pixels");
    r.epe_sum = total.value();
    for (std::size_t b = 0; b < 3; ++b) r.bucket_sums[b] = buckets[b].value();
    finalize(r);
    return r;
}

}  // namespace flowmatch
