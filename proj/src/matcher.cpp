#include "flowmatch/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "flowmatch/instrumentation.hpp"

namespace flowmatch {

namespace {

Tensor flatten_cells(const Tensor& f) {
    if (f.rank() != 3) throw DimensionError("expected an h x w x d feature map, got " + shape_string(f.shape()));
    return f.reshaped({f.dim(0) * f.dim(1), f.dim(2)});
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shapes differ " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

Tensor apply_linear(const Linear& l, const Tensor& x, const KernelOptions& opts) {
    Tensor y = matmul_blocked(x, l.weight, opts.block, opts.deterministic);
    add_bias_lastdim(y, l.bias);
    return y;
}

// x + W_o softmax(q k^T / sqrt(d)) v with q from x, k and v from `context`.
Tensor attend(const Tensor& x, const Tensor& context, const AttentionWeights& w, const KernelOptions& opts) {
    const Tensor xn = layer_norm_lastdim(x);
    const Tensor cn = &x == &context ? xn : layer_norm_lastdim(context);
    const Tensor q = apply_linear(w.query, xn, opts);
    const Tensor kt = transpose2d(apply_linear(w.key, cn, opts));
    const Tensor v = apply_linear(w.value, cn, opts);
    const std::size_t m = q.dim(0), n = v.dim(0), d = v.dim(1);
    Tensor mixed({m, d});
    const std::size_t bs = std::max<std::size_t>(1, opts.block);
    const auto tiles = static_cast<std::ptrdiff_t>((m + bs - 1) / bs);
#pragma omp parallel
    {
        std::vector<float> probs(bs * n);
#pragma omp for schedule(static)
        for (std::ptrdiff_t t = 0; t < tiles; ++t) {
            const std::size_t r0 = static_cast<std::size_t>(t) * bs, r1 = std::min(r0 + bs, m);
            detail::softmax_affinity_rows(q, kt, r0, r1, probs.data(), opts);
            detail::gemm_rows(probs.data(), v.data(), n, d, 0, r1 - r0, 1.0, mixed.data() + r0 * d, opts);
        }
    }
    Tensor out = apply_linear(w.output, mixed, opts);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
    return out;
}

Tensor feedforward(const Tensor& x, const InteractionBlock& b, const KernelOptions& opts) {
    Tensor hidden = apply_linear(b.ffn_in, layer_norm_lastdim(x), opts);
    gelu_inplace(hidden);
    Tensor out = apply_linear(b.ffn_out, hidden, opts);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
    return out;
}

void check_linear(const Linear& l, std::size_t in, std::size_t out, const std::string& name) {
    if (l.weight.shape() != Shape{in, out}) {
        throw ConfigError(name + ".weight must be " + shape_string({in, out}) + ", got " +
                          shape_string(l.weight.shape()));
    }
    if (l.bias.shape() != Shape{out}) {
        throw ConfigError(name + ".bias must be " + shape_string({out}) + ", got " + shape_string(l.bias.shape()));
    }
    if (!l.weight.all_finite() || !l.bias.all_finite()) throw ConfigError(name + " holds non-finite values");
}

Linear random_linear(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain = 1.0) {
    Linear l{Tensor({in, out}), Tensor({out})};
    std::normal_distribution<double> g(0.0, gain / std::sqrt(static_cast<double>(in)));
    for (float& v : l.weight.values()) v = static_cast<float>(g(rng));
    return l;
}

}  // namespace

void InteractionWeights::validate(std::size_t width) const {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string base = "interact." + std::to_string(b);
        const InteractionBlock& blk = blocks[b];
        for (const auto& [attn, kind] : {std::pair{&blk.self_attn, "self"}, std::pair{&blk.cross_attn, "cross"}}) {
            check_linear(attn->query, width, width, base + "." + kind + ".q");
            check_linear(attn->key, width, width, base + "." + kind + ".k");
            check_linear(attn->value, width, width, base + "." + kind + ".v");
            check_linear(attn->output, width, width, base + "." + kind + ".o");
        }
        const std::size_t hidden = blk.ffn_in.weight.rank() == 2 ? blk.ffn_in.weight.dim(1) : 0;
        if (hidden == 0) throw ConfigError(base + ".ffn1.weight must be a width x hidden matrix");
        check_linear(blk.ffn_in, width, hidden, base + ".ffn1");
        check_linear(blk.ffn_out, hidden, width, base + ".ffn2");
    }
}

InteractionWeights InteractionWeights::random(std::size_t width, std::size_t blocks, std::uint64_t seed,
                                              std::size_t ffn_multiplier) {
    std::mt19937_64 rng(seed);
    InteractionWeights iw;
    for (std::size_t b = 0; b < blocks; ++b) {
        InteractionBlock blk;
        for (AttentionWeights* a : {&blk.self_attn, &blk.cross_attn}) {
            a->query = random_linear(width, width, rng);
            a->key = random_linear(width, width, rng);
            a->value = random_linear(width, width, rng);
            a->output = random_linear(width, width, rng, 0.1);
        }
        blk.ffn_in = random_linear(width, width * ffn_multiplier, rng);
        blk.ffn_out = random_linear(width * ffn_multiplier, width, rng, 0.1);
        iw.blocks.push_back(std::move(blk));
    }
    return iw;
}

Tensor positional_encoding(std::size_t h, std::size_t w, std::size_t d) {
    if (d == 0 || d % 4 != 0) throw ConfigError("positional encoding needs a width divisible by 4, got " + std::to_string(d));
    const std::size_t half = d / 2;
    Tensor pe({h, w, d});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            float* cell = pe.data() + (y * w + x) * d;
            for (std::size_t i = 0; i < half / 2; ++i) {
                const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
                cell[2 * i] = static_cast<float>(std::sin(static_cast<double>(y) * freq));
                cell[2 * i + 1] = static_cast<float>(std::cos(static_cast<double>(y) * freq));
                cell[half + 2 * i] = static_cast<float>(std::sin(static_cast<double>(x) * freq));
                cell[half + 2 * i + 1] = static_cast<float>(std::cos(static_cast<double>(x) * freq));
            }
        }
    }
    return pe;
}

Tensor coord_grid(std::size_t h, std::size_t w) {
    Tensor g({h, w, 2});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            g(y, x, 0) = static_cast<float>(x);
            g(y, x, 1) = static_cast<float>(y);
        }
    }
    return g;
}

std::pair<Tensor, Tensor> interact(const Tensor& f1_hat, const Tensor& f2_hat, const InteractionWeights& weights,
                                   const KernelOptions& opts) {
    require_same_shape(f1_hat, f2_hat, "interact");
    if (weights.blocks.empty()) return {f1_hat, f2_hat};
    const std::size_t h = f1_hat.dim(0), w = f1_hat.dim(1), d = f1_hat.dim(2);
    weights.validate(d);
    const Tensor pe = positional_encoding(h, w, d);
    Tensor x1 = flatten_cells(f1_hat), x2 = flatten_cells(f2_hat);
    for (std::size_t i = 0; i < x1.size(); ++i) {
        x1[i] += pe[i];
        x2[i] += pe[i];
    }
    for (const InteractionBlock& b : weights.blocks) {
        Tensor s1 = attend(x1, x1, b.self_attn, opts);
        Tensor s2 = attend(x2, x2, b.self_attn, opts);
        Tensor c1 = attend(s1, s2, b.cross_attn, opts);
        Tensor c2 = attend(s2, s1, b.cross_attn, opts);
        x1 = feedforward(c1, b, opts);
        x2 = feedforward(c2, b, opts);
    }
    require_finite(x1, "interact");
    require_finite(x2, "interact");
    return {std::move(x1).reshaped({h, w, d}), std::move(x2).reshaped({h, w, d})};
}

void check_correlation_cap(std::size_t cells, const MatchOptions& opts) {
    if (cells > opts.correlation_cap_cells) {
        throw ResourceError("correlation over " + std::to_string(cells) + " cells (" +
                            std::to_string(static_cast<double>(cells) * static_cast<double>(cells)) +
                            " entries) exceeds the cap of " + std::to_string(opts.correlation_cap_cells) +
                            " cells; raise correlation_cap or reduce the feature grid");
    }
}

namespace detail {

void softmax_affinity_rows(const Tensor& a, const Tensor& b_dn, std::size_t r0, std::size_t r1, float* out,
                           const KernelOptions& opts) {
    const std::size_t d = a.dim(1), n = b_dn.dim(1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    gemm_rows(a.data(), b_dn.data(), d, n, r0, r1, scale, out, opts);
    for (std::size_t r = 0; r < r1 - r0; ++r) softmax_row(out + r * n, n);
}

void weighted_rows(const float* probs, std::size_t rows, std::size_t n, const float* values, double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* p = probs + r * n;
        double mass = 0.0, su = 0.0, sv = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double pj = p[j];
            mass += pj;
            su += pj * values[2 * j];
            sv += pj * values[2 * j + 1];
        }
        out[2 * r] = su / mass;
        out[2 * r + 1] = sv / mass;
    }
}

}  // namespace detail

Tensor correlation(const Tensor& f1, const Tensor& f2, const MatchOptions& opts) {
    require_same_shape(f1, f2, "correlation");
    const Tensor a = flatten_cells(f1);
    const Tensor bt = transpose2d(flatten_cells(f2));
    const std::size_t n = a.dim(0), d = a.dim(1);
    check_correlation_cap(n, opts);
    Tensor corr({n, n});
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const std::size_t bs = std::max<std::size_t>(1, opts.kernel.block);
    const auto tiles = static_cast<std::ptrdiff_t>((n + bs - 1) / bs);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < tiles; ++t) {
        const std::size_t r0 = static_cast<std::size_t>(t) * bs, r1 = std::min(r0 + bs, n);
        detail::gemm_rows(a.data(), bt.data(), d, n, r0, r1, scale, corr.data() + r0 * n, opts.kernel);
    }
    require_finite(corr, "correlation");
    return corr;
}

Tensor match_distribution(const Tensor& corr) {
    if (corr.rank() != 2 || corr.dim(0) != corr.dim(1)) {
        throw DimensionError("match_distribution: correlation must be square, got " + shape_string(corr.shape()));
    }
    return softmax_lastdim(corr);
}

std::pair<Tensor, Tensor> expected_flow(const Tensor& match, const Tensor& grid) {
    if (grid.rank() != 3 || grid.dim(2) != 2) throw DimensionError("expected_flow: grid must be h x w x 2");
    const std::size_t n = grid.dim(0) * grid.dim(1);
    if (match.shape() != Shape{n, n}) {
        throw DimensionError("expected_flow: match " + shape_string(match.shape()) + " does not fit grid " +
                             shape_string(grid.shape()));
    }
    Tensor expected(grid.shape()), flow(grid.shape());
    const std::size_t bs = 64;
    const auto tiles = static_cast<std::ptrdiff_t>((n + bs - 1) / bs);
#pragma omp parallel
    {
        std::vector<double> acc(2 * bs);
#pragma omp for schedule(static)
        for (std::ptrdiff_t t = 0; t < tiles; ++t) {
            const std::size_t r0 = static_cast<std::size_t>(t) * bs, r1 = std::min(r0 + bs, n);
            detail::weighted_rows(match.data() + r0 * n, r1 - r0, n, grid.data(), acc.data());
            for (std::size_t r = r0; r < r1; ++r) {
                for (int c = 0; c < 2; ++c) {
                    expected[2 * r + c] = static_cast<float>(acc[2 * (r - r0) + c]);
                    flow[2 * r + c] = expected[2 * r + c] - grid[2 * r + c];
                }
            }
        }
    }
    return {std::move(expected), std::move(flow)};
}

MatchingResult global_match(const Tensor& f1, const Tensor& f2, const MatchOptions& opts) {
    instrumentation::count_matcher();
    MatchingResult r;
    r.corr = correlation(f1, f2, opts);
    r.match = match_distribution(r.corr);
    std::tie(r.expected, r.flow_raw) = expected_flow(r.match, coord_grid(f1.dim(0), f1.dim(1)));
    return r;
}

Tensor match_flow(const Tensor& f1, const Tensor& f2, const MatchOptions& opts) {
    instrumentation::count_matcher();
    require_same_shape(f1, f2, "match_flow");
    const std::size_t h = f1.dim(0), w = f1.dim(1), n = h * w;
    check_correlation_cap(n, opts);
    const Tensor a = flatten_cells(f1);
    const Tensor bt = transpose2d(flatten_cells(f2));
    const Tensor grid = coord_grid(h, w);
    Tensor flow({h, w, 2});
    const std::size_t bs = std::max<std::size_t>(1, opts.kernel.block);
    const auto tiles = static_cast<std::ptrdiff_t>((n + bs - 1) / bs);
#pragma omp parallel
    {
        std::vector<float> probs(bs * n);
        std::vector<double> acc(2 * bs);
#pragma omp for schedule(static)
        for (std::ptrdiff_t t = 0; t < tiles; ++t) {
            const std::size_t r0 = static_cast<std::size_t>(t) * bs, r1 = std::min(r0 + bs, n);
            detail::softmax_affinity_rows(a, bt, r0, r1, probs.data(), opts.kernel);
            detail::weighted_rows(probs.data(), r1 - r0, n, grid.data(), acc.data());
            for (std::size_t r = r0; r < r1; ++r) {
                for (int c = 0; c < 2; ++c) {
                    const float expected = static_cast<float>(acc[2 * (r - r0) + c]);
                    flow[2 * r + c] = expected - grid[2 * r + c];
                }
            }
        }
    }
    require_finite(flow, "match_flow");
    return flow;
}

}  // namespace flowmatch
