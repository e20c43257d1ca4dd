#include "flowmatch/reference.hpp"

#include <algorithm>
#include <cmath>

namespace flowmatch::reference {

TensorD matmul(const TensorD& a, const TensorD& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw DimensionError("reference::matmul: inner dimensions disagree");
    TensorD c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    }
    return c;
}

std::vector<double> softmax(const std::vector<double>& row) {
    const double peak = *std::max_element(row.begin(), row.end());
    std::vector<double> out(row.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        out[j] = std::exp(row[j] - peak);
        sum += out[j];
    }
    for (double& v : out) v /= sum;
    return out;
}

TensorD conv2d(const TensorD& x, const TensorD& w, const ConvGeometry& geom) {
    const auto h = static_cast<long>(x.dim(0)), wd = static_cast<long>(x.dim(1));
    const std::size_t cin = x.dim(2);
    const auto kh = static_cast<long>(w.dim(0)), kw = static_cast<long>(w.dim(1));
    const std::size_t cout = w.dim(3);
    const auto s = static_cast<long>(geom.stride);
    const auto pb = static_cast<long>(geom.pad_begin);
    const long ph = h + pb + static_cast<long>(geom.pad_end);
    const long pw = wd + pb + static_cast<long>(geom.pad_end);
    const long oh = (ph - kh) / s + 1, ow = (pw - kw) / s + 1;
    TensorD out({static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), cout});
    for (long oy = 0; oy < oh; ++oy) {
        for (long ox = 0; ox < ow; ++ox) {
            for (std::size_t co = 0; co < cout; ++co) {
                double s_acc = 0.0;
                for (long ky = 0; ky < kh; ++ky) {
                    for (long kx = 0; kx < kw; ++kx) {
                        const long iy = oy * s + ky - pb, ix = ox * s + kx - pb;
                        const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < wd;
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            const double xv = inside ? x(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ci) : 0.0;
                            s_acc += xv * w[((static_cast<std::size_t>(ky) * w.dim(1) + static_cast<std::size_t>(kx)) * cin + ci) * cout + co];
                        }
                    }
                }
                out(static_cast<std::size_t>(oy), static_cast<std::size_t>(ox), co) = s_acc;
            }
        }
    }
    return out;
}

TensorD bilinear_resize(const TensorD& x, std::size_t h2, std::size_t w2) {
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    TensorD out({h2, w2, c});
    auto source = [](std::size_t o, std::size_t in, std::size_t outn) {
        double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
        return std::clamp(src, 0.0, static_cast<double>(in - 1));
    };
    for (std::size_t y = 0; y < h2; ++y) {
        const double sy = source(y, h, h2);
        const auto y0 = static_cast<std::size_t>(std::floor(sy));
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t xx = 0; xx < w2; ++xx) {
            const double sx = source(xx, w, w2);
            const auto x0 = static_cast<std::size_t>(std::floor(sx));
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                out(y, xx, ch) = (1 - fy) * (1 - fx) * x(y0, x0, ch) + (1 - fy) * fx * x(y0, x1, ch) +
                                 fy * (1 - fx) * x(y1, x0, ch) + fy * fx * x(y1, x1, ch);
            }
        }
    }
    return out;
}

namespace {

std::vector<double> scaled_dot_row(const TensorD& a, const TensorD& b, std::size_t p) {
    const std::size_t n = a.dim(0) * a.dim(1), d = a.dim(2);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> row(n);
    for (std::size_t q = 0; q < n; ++q) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += a[p * d + c] * b[q * d + c];
        row[q] = s * scale;
    }
    return row;
}

}  // namespace

TensorD match_flow(const TensorD& f1, const TensorD& f2) {
    const std::size_t h = f1.dim(0), w = f1.dim(1), n = h * w;
    TensorD flow({h, w, 2});
    for (std::size_t p = 0; p < n; ++p) {
        const auto prob = softmax(scaled_dot_row(f1, f2, p));
        double ex = 0.0, ey = 0.0;
        for (std::size_t q = 0; q < n; ++q) {
            ex += prob[q] * static_cast<double>(q % w);
            ey += prob[q] * static_cast<double>(q / w);
        }
        flow[p * 2] = ex - static_cast<double>(p % w);
        flow[p * 2 + 1] = ey - static_cast<double>(p / w);
    }
    return flow;
}

TensorD self_affinity(const TensorD& f1) {
    const std::size_t n = f1.dim(0) * f1.dim(1);
    TensorD attn({n, n});
    for (std::size_t p = 0; p < n; ++p) {
        const auto prob = softmax(scaled_dot_row(f1, f1, p));
        std::copy(prob.begin(), prob.end(), attn.data() + p * n);
    }
    return attn;
}

TensorD propagate(const TensorD& attn, const TensorD& flow) {
    const std::size_t n = attn.dim(0);
    TensorD out(flow.shape());
    for (std::size_t p = 0; p < n; ++p) {
        double u = 0.0, v = 0.0;
        for (std::size_t q = 0; q < n; ++q) {
            u += attn[p * n + q] * flow[q * 2];
            v += attn[p * n + q] * flow[q * 2 + 1];
        }
        out[p * 2] = u;
        out[p * 2 + 1] = v;
    }
    return out;
}

}  // namespace flowmatch::reference
