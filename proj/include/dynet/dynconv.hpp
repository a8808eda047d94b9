#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynet/ops.hpp"
#include "dynet/random.hpp"
#include "dynet/tensor.hpp"

namespace dynet {

/// A convolution whose per-sample kernel is a coefficient-weighted sum of a
/// fixed bank. For output channel t and bank member i the fixed kernel w_t^i
/// is row t * bank_size + i of `fixed_kernels`.
template <typename T>
struct DynamicConvLayer {
  ConvGeometry geom;
  std::size_t bank_size = 1;
  Tensor<T> fixed_kernels;        ///< [C_out * bank_size, C_in / groups, k, k]
  std::optional<Tensor<T>> bias;  ///< [C_out], applied after fusion; never dynamic

  void validate() const;
  std::size_t coefficient_count() const { return geom.out_channels * bank_size; }

  /// Geometry of the convolution that runs the whole bank at once.
  ConvGeometry bank_geometry() const;

  /// Bank members drawn independently from U(-b, b), b = sqrt(6 / fan_in).
  static DynamicConvLayer random(const ConvGeometry& geom, std::size_t bank_size, bool with_bias, Rng& rng);
};

/// Fusion coefficients, one row per sample. For a single layer segment the
/// coefficient of output channel t and bank member i sits at column
/// t * bank_size + i.
template <typename T>
struct Coefficients {
  Tensor<T> values;  ///< [N, count]

  std::size_t batch() const { return values.dim(0); }
  std::size_t count() const { return values.dim(1); }
  std::span<const T> row(std::size_t n) const { return values.data().subspan(n * count(), count()); }
  Coefficients segment(std::size_t offset, std::size_t length) const;
};

struct ServedLayer {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Global average pool -> linear (-> ReLU -> linear) -> sigmoid. One
/// predictor serves every dynamic layer of a block; each layer owns the
/// contiguous segment recorded in `served`.
template <typename T>
struct CoefficientPredictor {
  std::size_t in_channels = 0;
  std::size_t hidden = 0;  ///< 0 selects the single-linear form
  Tensor<T> w1, b1;
  Tensor<T> w2, b2;
  std::vector<ServedLayer> served;

  std::size_t total() const;
  bool two_layer() const { return hidden > 0; }
  void validate() const;
  const ServedLayer& layer(const std::string& name) const;

  /// `layers` lists (name, coefficient count) in serving order. Weights are
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with zero biases, so fresh
  /// predictors emit coefficients near 0.5.
  static CoefficientPredictor make(std::size_t in_channels, std::size_t hidden,
                                   const std::vector<std::pair<std::string, std::size_t>>& layers, Rng& rng);
};

template <typename T>
Coefficients<T> predict_coefficients(const CoefficientPredictor<T>& predictor, const Tensor<T>& block_input);

/// One sample's dynamic kernel: w~_t = sum_i eta_t^i * w_t^i.
template <typename T>
Tensor<T> fuse_kernels(const DynamicConvLayer<T>& layer, std::span<const T> eta);

/// Kernel-fusion path: fuse per sample, then one convolution. Samples with
/// bitwise-equal coefficient rows share a single fused kernel and conv call.
template <typename T>
Tensor<T> forward_infer(const DynamicConvLayer<T>& layer, const Coefficients<T>& coeffs, const Tensor<T>& input,
                        ConvBackend backend = ConvBackend::Im2col);

/// Feature-fusion path: convolve with the whole bank once, then reduce each
/// bank slice of output channels with the sample's coefficients.
template <typename T>
Tensor<T> forward_train(const DynamicConvLayer<T>& layer, const Coefficients<T>& coeffs, const Tensor<T>& input,
                        ConvBackend backend = ConvBackend::Im2col);

/// out[n, t] = sum_i eta[n, t * bank + i] * bank_out[n, t * bank + i].
template <typename T>
Tensor<T> combine_bank_outputs(const Tensor<T>& bank_out, const Tensor<T>& eta, std::size_t bank_size);

template <typename T>
struct CombineGrads {
  Tensor<T> bank_out;
  Tensor<T> eta;
};

template <typename T>
CombineGrads<T> combine_bank_outputs_backward(const Tensor<T>& grad_out, const Tensor<T>& bank_out,
                                              const Tensor<T>& eta, std::size_t bank_size);

}  // namespace dynet
