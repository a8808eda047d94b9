#pragma once

#include <cstddef>

#include "dynet/ops.hpp"

namespace dynet::detail {

// im2col + GEMM convolution over raw NCHW buffers. `y` receives n_batch * out_channels * ho * wo values.
template <typename T>
void conv2d_raw(const T* x, std::size_t n_batch, std::size_t h, std::size_t w, const T* weight, const T* bias,
                const ConvGeometry& g, T* y);

}  // namespace dynet::detail
