#pragma once

// Serial, unoptimized reference implementations. They share no code with the
// blocked/OpenMP kernels and exist to be compared against them in tests,
// the selftest command and the benchmarks.

#include <cstddef>
#include <vector>

#include "flowmatch/kernels.hpp"
#include "flowmatch/tensor.hpp"

namespace flowmatch::reference {

/// Triple-loop product, i-j-k order, accumulation in double.
TensorD matmul(const TensorD& a, const TensorD& b);

/// exp(x - max) / sum over one row, all in double.
std::vector<double> softmax(const std::vector<double>& row);

/// Sliding-window convolution that visits every kernel tap (zero padding
/// included) in (ky, kx, ci) order.
TensorD conv2d(const TensorD& x, const TensorD& w, const ConvGeometry& geom);

/// Bilinear resize, align-corners=false, written with explicit corner weights.
TensorD bilinear_resize(const TensorD& x, std::size_t h2, std::size_t w2);

/// Dense matching by double loops: correlation, row softmax and expectation.
/// Returns the raw flow (h x w x 2, cell units).
TensorD match_flow(const TensorD& f1, const TensorD& f2);

/// Row-softmax of F1 F1^T / sqrt(D) by double loops.
TensorD self_affinity(const TensorD& f1);

/// attn (N x N) times flow (h x w x 2) by double loops.
TensorD propagate(const TensorD& attn, const TensorD& flow);

}  // namespace flowmatch::reference
