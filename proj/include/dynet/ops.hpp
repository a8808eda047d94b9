#pragma once

#include <vector>

#include "dynet/tensor.hpp"

namespace dynet {

enum class ConvBackend {
  Direct,  ///< fixed loop nest, the reference
  Im2col,  ///< im2col + GEMM, the fast path
};

enum class Mode { Train, Eval };

/// Grouped 2-D cross-correlation (no kernel flip) over NCHW input.
/// Output extent is floor((H + 2*pad - k) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias, const ConvGeometry& geom,
                 ConvBackend backend = ConvBackend::Im2col);

/// Gradient of conv2d w.r.t. its input, given dL/d(output).
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, const ConvGeometry& geom,
                                const Shape& input_shape);

/// Gradient of conv2d w.r.t. its weight. Samples are reduced in index order.
template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& input, const Tensor<T>& grad_out, const ConvGeometry& geom);

/// Per-output-channel sum of dL/d(output): the bias gradient.
template <typename T>
Tensor<T> channel_sum(const Tensor<T>& grad_out);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

/// input [N, F_in] (or [N, C, 1, 1]), weight [F_out, F_in], bias [F_out] -> [N, F_out].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Running statistics of a batch-norm layer. Train mode blends batch
/// statistics in as running = momentum * running + (1 - momentum) * batch.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool initialized = false;
  T momentum = T(0.9);
  T eps = T(1e-5);

  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t channels);

  /// Sets mean 0 / variance 1 so eval mode may run before any training.
  void init_identity();
};

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;
  std::vector<T> inv_std;
  Mode mode = Mode::Train;
};

/// Per-channel normalization of NCHW input followed by scale/shift.
/// Train mode normalizes with biased batch statistics and updates `stats`;
/// eval mode uses the running statistics and throws if none exist.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift, BatchNormStats<T>& stats,
                     Mode mode, BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> scale;
  Tensor<T> shift;
};

template <typename T>
BatchNormGrads<T> batch_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& scale,
                                      const BatchNormCache<T>& cache);

}  // namespace dynet
