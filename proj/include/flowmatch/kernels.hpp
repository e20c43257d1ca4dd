#pragma once

#include <cstddef>

#include "flowmatch/tensor.hpp"

namespace flowmatch {

/// Execution knobs shared by the dense kernels.
///
/// With `deterministic` set, every output element is reduced in a fixed order
/// that does not depend on `block` or on the worker count. Without it, the
/// k-dimension is reduced per tile and the partial sums are combined, which
/// makes the low bits depend on `block`.
struct KernelOptions {
    std::size_t block = 64;
    bool deterministic = true;
};

/// C = A * B for A (m x k) and B (k x n). Storage width T, accumulation in double.
template <typename T>
BasicTensor<T> matmul_blocked(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t block,
                              bool deterministic = true);

/// Numerically stable softmax over the last axis (max-subtracted, double accumulation).
template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x);

/// Zero-padded convolution geometry. Begin/end padding may differ so that
/// stride-2 "same" downsampling stays exact on even extents.
struct ConvGeometry {
    std::size_t stride = 1;
    std::size_t pad_begin = 0;
    std::size_t pad_end = 0;

    static ConvGeometry symmetric(std::size_t stride, std::size_t pad) { return {stride, pad, pad}; }
    /// Output extent ceil(in / stride) for a kernel of size k.
    static ConvGeometry same(std::size_t kernel, std::size_t stride, std::size_t in_extent);
};

/// x: h x w x cin, w: kh x kw x cin x cout -> h' x w' x cout.
/// h' = (h + pad_begin + pad_end - kh) / stride + 1 must divide exactly.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const ConvGeometry& geom);

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, std::size_t stride, std::size_t pad) {
    return conv2d(x, w, ConvGeometry::symmetric(stride, pad));
}

/// Bilinear resize of an h x w x c map, align-corners=false with edge clamping.
template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, std::size_t h2, std::size_t w2);

template <typename T>
BasicTensor<T> transpose2d(const BasicTensor<T>& x);

/// Adds a per-channel bias along the last axis in place.
template <typename T>
void add_bias_lastdim(BasicTensor<T>& x, const BasicTensor<T>& bias);

/// Exact (erf-based) GELU, elementwise in place.
template <typename T>
void gelu_inplace(BasicTensor<T>& x);

/// Parameter-free layer normalization over the last axis (eps 1e-5).
template <typename T>
BasicTensor<T> layer_norm_lastdim(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> concat_lastdim(const BasicTensor<T>& a, const BasicTensor<T>& b);

namespace detail {

/// Computes rows [row_begin, row_end) of scale * (A * B) into `out`
/// (row-major, (row_end - row_begin) x n). A is m x k, B is k x n.
template <typename T>
void gemm_rows(const T* a, const T* b, std::size_t k, std::size_t n, std::size_t row_begin,
               std::size_t row_end, double scale, T* out, const KernelOptions& opts);

/// In-place stable softmax of one row of length n.
template <typename T>
void softmax_row(T* row, std::size_t n);

}  // namespace detail

}  // namespace flowmatch
