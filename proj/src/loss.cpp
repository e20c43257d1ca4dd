#include "flowmatch/loss.hpp"

#include <algorithm>
#include <cmath>

#include "flowmatch/kernels.hpp"

namespace flowmatch {

LossReport flow_loss(std::span<const FlowField> preds, const FlowField& gt, double gamma,
                     const std::optional<std::vector<std::uint8_t>>& valid_mask) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("flow_loss: gamma must lie in (0, 1]");
    if (preds.empty()) throw DimensionError("flow_loss: no predictions");
    if (valid_mask && valid_mask->size() != gt.pixels()) throw DimensionError("flow_loss: mask extent mismatch");
    for (const FlowField& p : preds) {
        if (p.height() != gt.height() || p.width() != gt.width()) throw DimensionError("flow_loss: extent mismatch");
    }
    std::size_t count = 0;
    for (std::size_t p = 0; p < gt.pixels(); ++p) {
        if (gt.is_valid(p) && (!valid_mask || (*valid_mask)[p])) ++count;
    }
    if (count == 0) throw UndefinedMetricError("flow_loss: empty valid mask");

    LossReport r;
    r.n = preds.size();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        double sum = 0.0;
        for (std::size_t p = 0; p < gt.pixels(); ++p) {
            if (!gt.is_valid(p) || (valid_mask && !(*valid_mask)[p])) continue;
            sum += std::abs(static_cast<double>(preds[i].data[2 * p]) - gt.data[2 * p]) +
                   std::abs(static_cast<double>(preds[i].data[2 * p + 1]) - gt.data[2 * p + 1]);
        }
        const double weight = std::pow(gamma, static_cast<double>(preds.size() - 1 - i));
        const double raw = sum / static_cast<double>(count);
        r.per_prediction.push_back({weight, raw});
        r.total += weight * raw;
    }
    return r;
}

namespace {

struct ChainState {
    std::size_t h, w, n, d;
    double scale;
    TensorD a, b;   // flattened f1, f2 (n x d)
    TensorD grid;   // n x 2
    TensorD match;  // n x n
    TensorD attn;   // n x n
    TensorD raw;    // n x 2
    TensorD prop;   // n x 2
};

ChainState forward(const TensorD& f1, const TensorD& f2) {
    if (f1.rank() != 3 || f1.shape() != f2.shape()) throw DimensionError("matching chain: feature shapes differ");
    ChainState s;
    s.h = f1.dim(0);
    s.w = f1.dim(1);
    s.n = s.h * s.w;
    s.d = f1.dim(2);
    s.scale = 1.0 / std::sqrt(static_cast<double>(s.d));
    s.a = f1.reshaped({s.n, s.d});
    s.b = f2.reshaped({s.n, s.d});
    s.grid = TensorD({s.n, 2});
    for (std::size_t p = 0; p < s.n; ++p) {
        s.grid[2 * p] = static_cast<double>(p % s.w);
        s.grid[2 * p + 1] = static_cast<double>(p / s.w);
    }
    auto scaled = [&](TensorD m) {
        for (double& v : m.values()) v *= s.scale;
        return m;
    };
    s.match = softmax_lastdim(scaled(matmul_blocked(s.a, transpose2d(s.b), 16)));
    s.raw = matmul_blocked(s.match, s.grid, 16);
    for (std::size_t i = 0; i < s.raw.size(); ++i) s.raw[i] -= s.grid[i];
    s.attn = softmax_lastdim(scaled(matmul_blocked(s.a, transpose2d(s.a), 16)));
    s.prop = matmul_blocked(s.attn, s.raw, 16);
    return s;
}

double l1_mean(const TensorD& pred, const TensorD& gt) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - gt[i]);
    return sum / static_cast<double>(pred.size() / 2);
}

double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

// Softmax backward, row-wise: g_in = p * (g_out - sum_j p_j g_out_j).
TensorD softmax_backward(const TensorD& p, const TensorD& g) {
    const std::size_t n = p.dim(1);
    TensorD out(p.shape());
    for (std::size_t i = 0; i < p.dim(0); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += p[i * n + j] * g[i * n + j];
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = p[i * n + j] * (g[i * n + j] - dot);
    }
    return out;
}

void check_gt(const TensorD& f1, const TensorD& gt) {
    if (gt.shape() != Shape{f1.dim(0), f1.dim(1), 2}) throw DimensionError("matching chain: gt must be h x w x 2");
}

}  // namespace

std::pair<TensorD, TensorD> matching_chain_predictions(const TensorD& f1, const TensorD& f2) {
    ChainState s = forward(f1, f2);
    return {std::move(s.raw).reshaped({s.h, s.w, 2}), std::move(s.prop).reshaped({s.h, s.w, 2})};
}

double matching_chain_loss(const TensorD& f1, const TensorD& f2, const TensorD& gt, double gamma) {
    check_gt(f1, gt);
    const ChainState s = forward(f1, f2);
    const TensorD g = gt.reshaped({s.n, 2});
    return gamma * l1_mean(s.raw, g) + l1_mean(s.prop, g);
}

ChainGradient matching_chain_gradient(const TensorD& f1, const TensorD& f2, const TensorD& gt, double gamma) {
    check_gt(f1, gt);
    const ChainState s = forward(f1, f2);
    const TensorD g = gt.reshaped({s.n, 2});
    const double inv_n = 1.0 / static_cast<double>(s.n);

    ChainGradient out;
    out.loss = gamma * l1_mean(s.raw, g) + l1_mean(s.prop, g);

    TensorD g_prop({s.n, 2});
    for (std::size_t i = 0; i < g_prop.size(); ++i) g_prop[i] = sign(s.prop[i] - g[i]) * inv_n;

    // prop = attn * raw
    TensorD g_attn = matmul_blocked(g_prop, transpose2d(s.raw), 16);
    TensorD g_raw = matmul_blocked(transpose2d(s.attn), g_prop, 16);
    for (std::size_t i = 0; i < g_raw.size(); ++i) g_raw[i] += gamma * sign(s.raw[i] - g[i]) * inv_n;

    // raw = match * grid - grid
    const TensorD g_match = matmul_blocked(g_raw, transpose2d(s.grid), 16);

    TensorD g_corr = softmax_backward(s.match, g_match);
    TensorD g_self = softmax_backward(s.attn, g_attn);
    for (double& v : g_corr.values()) v *= s.scale;
    for (double& v : g_self.values()) v *= s.scale;

    // corr = a b^T, self = a a^T
    TensorD g_a = matmul_blocked(g_corr, s.b, 16);
    const TensorD g_b = matmul_blocked(transpose2d(g_corr), s.a, 16);
    const TensorD g_sa = matmul_blocked(g_self, s.a, 16);
    const TensorD g_sat = matmul_blocked(transpose2d(g_self), s.a, 16);
    for (std::size_t i = 0; i < g_a.size(); ++i) g_a[i] += g_sa[i] + g_sat[i];

    out.grad_f1 = std::move(g_a).reshaped(f1.shape());
    out.grad_f2 = g_b.reshaped(f2.shape());
    if (!out.grad_f1.all_finite() || !out.grad_f2.all_finite()) throw NumericError("matching chain: non-finite gradient");
    return out;
}

double central_difference(const TensorD& f1, const TensorD& f2, const TensorD& gt, int which, std::size_t index,
                          double eps, double gamma) {
    TensorD p1 = f1, p2 = f2;
    TensorD& target = which == 0 ? p1 : p2;
    const double x0 = target[index];
    target[index] = x0 + eps;
    const double up = matching_chain_loss(p1, p2, gt, gamma);
    target[index] = x0 - eps;
    const double down = matching_chain_loss(p1, p2, gt, gamma);
    return (up - down) / (2.0 * eps);
}

GradcheckReport gradcheck_matching_chain(const TensorD& f1, const TensorD& f2, const TensorD& gt, double eps,
                                         double gamma, double abs_floor) {
    if (f1.rank() != 3 || f1.dim(0) * f1.dim(1) > 36) throw DimensionError("gradcheck: grid must have h*w <= 36");
    if (!(eps > 0.0)) throw DimensionError("gradcheck: eps must be positive");
    GradcheckReport r;
    r.analytic = matching_chain_gradient(f1, f2, gt, gamma);
    r.numeric_f1 = TensorD(f1.shape());
    r.numeric_f2 = TensorD(f2.shape());
    for (int which = 0; which < 2; ++which) {
        const TensorD& analytic = which == 0 ? r.analytic.grad_f1 : r.analytic.grad_f2;
        TensorD& numeric = which == 0 ? r.numeric_f1 : r.numeric_f2;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            numeric[i] = central_difference(f1, f2, gt, which, i, eps, gamma);
            if (!std::isfinite(numeric[i])) throw NumericError("gradcheck: non-finite finite difference");
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), abs_floor});
            r.max_rel_err = std::max(r.max_rel_err, std::abs(analytic[i] - numeric[i]) / denom);
            ++r.checked;
        }
    }
    return r;
}

}  // namespace flowmatch
