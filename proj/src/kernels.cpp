#include "flowmatch/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace flowmatch {

namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
    if (shape.size() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_string(shape));
    }
}

// Column tile width of the gemm micro-loop; wide enough for the compiler to vectorize.
constexpr std::size_t kColumnTile = 256;

}  // namespace

ConvGeometry ConvGeometry::same(std::size_t kernel, std::size_t stride, std::size_t in_extent) {
    if (stride == 0 || kernel == 0) throw DimensionError("conv geometry: kernel and stride must be positive");
    const std::size_t out = (in_extent + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + kernel;
    const std::size_t total = needed > in_extent ? needed - in_extent : 0;
    return {stride, total / 2, total - total / 2};
}

namespace detail {

template <typename T>
void gemm_rows(const T* a, const T* b, std::size_t k, std::size_t n, std::size_t row_begin,
               std::size_t row_end, double scale, T* out, const KernelOptions& opts) {
    const std::size_t bs = std::max<std::size_t>(1, opts.block);
    const std::size_t jt = std::max(bs, kColumnTile);
    std::vector<double> acc(bs * jt);
    std::vector<double> part(opts.deterministic ? 0 : bs * jt);
    std::vector<double> btile(bs * jt);

    for (std::size_t i0 = row_begin; i0 < row_end; i0 += bs) {
        const std::size_t i1 = std::min(i0 + bs, row_end);
        for (std::size_t j0 = 0; j0 < n; j0 += jt) {
            const std::size_t j1 = std::min(j0 + jt, n);
            const std::size_t nj = j1 - j0;
            std::fill(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>((i1 - i0) * nj), 0.0);
            for (std::size_t k0 = 0; k0 < k; k0 += bs) {
                const std::size_t k1 = std::min(k0 + bs, k);
                for (std::size_t kk = k0; kk < k1; ++kk) {
                    const T* src = b + kk * n + j0;
                    double* dst = btile.data() + (kk - k0) * nj;
                    for (std::size_t jj = 0; jj < nj; ++jj) dst[jj] = static_cast<double>(src[jj]);
                }
                double* target = opts.deterministic ? acc.data() : part.data();
                if (!opts.deterministic) {
                    std::fill(part.begin(), part.begin() + static_cast<std::ptrdiff_t>((i1 - i0) * nj), 0.0);
                }
                for (std::size_t i = i0; i < i1; ++i) {
                    const T* arow = a + i * k;
                    double* trow = target + (i - i0) * nj;
                    for (std::size_t kk = k0; kk < k1; ++kk) {
                        const double av = static_cast<double>(arow[kk]);
                        const double* brow = btile.data() + (kk - k0) * nj;
                        for (std::size_t jj = 0; jj < nj; ++jj) trow[jj] += av * brow[jj];
                    }
                }
                if (!opts.deterministic) {
                    for (std::size_t t = 0; t < (i1 - i0) * nj; ++t) acc[t] += part[t];
                }
            }
            for (std::size_t i = i0; i < i1; ++i) {
                const double* arow = acc.data() + (i - i0) * nj;
                T* orow = out + (i - row_begin) * n + j0;
                for (std::size_t jj = 0; jj < nj; ++jj) orow[jj] = static_cast<T>(arow[jj] * scale);
            }
        }
    }
}

template <typename T>
void softmax_row(T* row, std::size_t n) {
    thread_local std::vector<double> expv;
    expv.resize(n);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) peak = std::max(peak, static_cast<double>(row[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        expv[j] = std::exp(static_cast<double>(row[j]) - peak);
        sum += expv[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<T>(expv[j] * inv);
}

template void gemm_rows<float>(const float*, const float*, std::size_t, std::size_t, std::size_t, std::size_t,
                               double, float*, const KernelOptions&);
template void gemm_rows<double>(const double*, const double*, std::size_t, std::size_t, std::size_t,
                                std::size_t, double, double*, const KernelOptions&);
template void softmax_row<float>(float*, std::size_t);
template void softmax_row<double>(double*, std::size_t);

}  // namespace detail

template <typename T>
BasicTensor<T> matmul_blocked(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t block,
                              bool deterministic) {
    require_rank(a.shape(), 2, "matmul_blocked(a)");
    require_rank(b.shape(), 2, "matmul_blocked(b)");
    if (block == 0) throw DimensionError("matmul_blocked: block must be >= 1");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul_blocked: inner dimensions disagree " + shape_string(a.shape()) + " * " +
                             shape_string(b.shape()));
    }
    BasicTensor<T> c({m, n});
    const KernelOptions opts{block, deterministic};
    const auto tiles = static_cast<std::ptrdiff_t>((m + block - 1) / block);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < tiles; ++t) {
        const std::size_t r0 = static_cast<std::size_t>(t) * block;
        const std::size_t r1 = std::min(r0 + block, m);
        detail::gemm_rows(a.data(), b.data(), k, n, r0, r1, 1.0, c.data() + r0 * n, opts);
    }
    require_finite(c, "matmul_blocked");
    return c;
}

template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x) {
    if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("softmax_lastdim: empty last axis");
    const std::size_t n = x.shape().back();
    const auto rows = static_cast<std::ptrdiff_t>(x.size() / n);
    BasicTensor<T> out = x;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) detail::softmax_row(out.data() + static_cast<std::size_t>(r) * n, n);
    require_finite(out, "softmax_lastdim");
    return out;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const ConvGeometry& geom) {
    require_rank(x.shape(), 3, "conv2d(x)");
    require_rank(w.shape(), 4, "conv2d(w)");
    const std::size_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
    const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
    if (w.dim(2) != cin) {
        throw DimensionError("conv2d: kernel expects " + std::to_string(w.dim(2)) + " input channels, got " +
                             std::to_string(cin));
    }
    if (geom.stride == 0) throw DimensionError("conv2d: stride must be >= 1");
    const std::size_t ph = h + geom.pad_begin + geom.pad_end;
    const std::size_t pw = wd + geom.pad_begin + geom.pad_end;
    if (kh > ph || kw > pw) throw DimensionError("conv2d: kernel larger than padded input");
    if ((ph - kh) % geom.stride != 0 || (pw - kw) % geom.stride != 0) {
        throw DimensionError("conv2d: output extent is not integral for input " + shape_string(x.shape()) +
                             ", kernel " + std::to_string(kh) + "x" + std::to_string(kw) + ", stride " +
                             std::to_string(geom.stride));
    }
    const std::size_t oh = (ph - kh) / geom.stride + 1;
    const std::size_t ow = (pw - kw) / geom.stride + 1;
    BasicTensor<T> out({oh, ow, cout});
    const auto pb = static_cast<std::ptrdiff_t>(geom.pad_begin);

#pragma omp parallel
    {
        std::vector<double> acc(cout);
#pragma omp for schedule(static)
        for (std::ptrdiff_t oy = 0; oy < static_cast<std::ptrdiff_t>(oh); ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const std::ptrdiff_t iy = oy * static_cast<std::ptrdiff_t>(geom.stride) + static_cast<std::ptrdiff_t>(ky) - pb;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * geom.stride + kx) - pb;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                        const T* px = x.data() + (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * cin;
                        const T* wk = w.data() + (ky * kw + kx) * cin * cout;
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            const double xv = static_cast<double>(px[ci]);
                            const T* wrow = wk + ci * cout;
                            for (std::size_t co = 0; co < cout; ++co) acc[co] += xv * static_cast<double>(wrow[co]);
                        }
                    }
                }
                T* dst = out.data() + (static_cast<std::size_t>(oy) * ow + ox) * cout;
                for (std::size_t co = 0; co < cout; ++co) dst[co] = static_cast<T>(acc[co]);
            }
        }
    }
    require_finite(out, "conv2d");
    return out;
}

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, std::size_t h2, std::size_t w2) {
    require_rank(x.shape(), 3, "bilinear_resize");
    if (h2 == 0 || w2 == 0) throw DimensionError("bilinear_resize: target extents must be >= 1");
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (h == 0 || w == 0) throw DimensionError("bilinear_resize: empty input");

    struct Tap {
        std::size_t i0, i1;
        double frac;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t o = 0; o < out; ++o) {
            const double src = std::max((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0);
            auto i0 = static_cast<std::size_t>(src);
            if (i0 >= in - 1) {
                t[o] = {in - 1, in - 1, 0.0};
            } else {
                t[o] = {i0, i0 + 1, src - static_cast<double>(i0)};
            }
        }
        return t;
    };
    const auto ty = taps(h, h2);
    const auto tx = taps(w, w2);

    BasicTensor<T> out({h2, w2, c});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t yy = 0; yy < static_cast<std::ptrdiff_t>(h2); ++yy) {
        const Tap& vy = ty[static_cast<std::size_t>(yy)];
        for (std::size_t xx = 0; xx < w2; ++xx) {
            const Tap& vx = tx[xx];
            const T* p00 = x.data() + (vy.i0 * w + vx.i0) * c;
            const T* p01 = x.data() + (vy.i0 * w + vx.i1) * c;
            const T* p10 = x.data() + (vy.i1 * w + vx.i0) * c;
            const T* p11 = x.data() + (vy.i1 * w + vx.i1) * c;
            T* dst = out.data() + (static_cast<std::size_t>(yy) * w2 + xx) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
                // a + t * (b - a) keeps constant fields exactly constant.
                const double top = p00[ch] + vx.frac * (static_cast<double>(p01[ch]) - p00[ch]);
                const double bot = p10[ch] + vx.frac * (static_cast<double>(p11[ch]) - p10[ch]);
                dst[ch] = static_cast<T>(top + vy.frac * (bot - top));
            }
        }
    }
    require_finite(out, "bilinear_resize");
    return out;
}

template <typename T>
BasicTensor<T> transpose2d(const BasicTensor<T>& x) {
    require_rank(x.shape(), 2, "transpose2d");
    const std::size_t m = x.dim(0), n = x.dim(1);
    BasicTensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
    return out;
}

template <typename T>
void add_bias_lastdim(BasicTensor<T>& x, const BasicTensor<T>& bias) {
    if (x.rank() == 0 || bias.size() != x.shape().back()) {
        throw DimensionError("add_bias_lastdim: bias of " + std::to_string(bias.size()) + " values for " +
                             shape_string(x.shape()));
    }
    const std::size_t n = bias.size();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += bias[i % n];
}

template <typename T>
void gelu_inplace(BasicTensor<T>& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (T& v : x.values()) {
        const double d = v;
        v = static_cast<T>(0.5 * d * (1.0 + std::erf(d * inv_sqrt2)));
    }
}

template <typename T>
BasicTensor<T> layer_norm_lastdim(const BasicTensor<T>& x) {
    if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("layer_norm_lastdim: empty last axis");
    const std::size_t n = x.shape().back();
    BasicTensor<T> out(x.shape());
    for (std::size_t r = 0; r < x.size() / n; ++r) {
        const T* src = x.data() + r * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += src[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (src[j] - mean) * (src[j] - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<T>((src[j] - mean) * inv);
    }
    return out;
}

template <typename T>
BasicTensor<T> concat_lastdim(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != b.rank() || a.rank() == 0 ||
        !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
        throw DimensionError("concat_lastdim: leading extents differ " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    const std::size_t ca = a.shape().back(), cb = b.shape().back();
    Shape shape = a.shape();
    shape.back() = ca + cb;
    BasicTensor<T> out(shape);
    const std::size_t rows = a.size() / std::max<std::size_t>(ca, 1);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.data() + r * ca, ca, out.data() + r * (ca + cb));
        std::copy_n(b.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
    }
    return out;
}

#define FLOWMATCH_INSTANTIATE(T)                                                                         \
    template BasicTensor<T> matmul_blocked<T>(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t, \
                                              bool);                                                     \
    template BasicTensor<T> softmax_lastdim<T>(const BasicTensor<T>&);                                   \
    template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&, const ConvGeometry&); \
    template BasicTensor<T> bilinear_resize<T>(const BasicTensor<T>&, std::size_t, std::size_t);         \
    template BasicTensor<T> transpose2d<T>(const BasicTensor<T>&);                                       \
    template void add_bias_lastdim<T>(BasicTensor<T>&, const BasicTensor<T>&);                           \
    template void gelu_inplace<T>(BasicTensor<T>&);                                                      \
    template BasicTensor<T> layer_norm_lastdim<T>(const BasicTensor<T>&);                                \
    template BasicTensor<T> concat_lastdim<T>(const BasicTensor<T>&, const BasicTensor<T>&);

FLOWMATCH_INSTANTIATE(float)
FLOWMATCH_INSTANTIATE(double)

#undef FLOWMATCH_INSTANTIATE

}  // namespace flowmatch
