#include "dynet/dynconv.hpp"

#include <cmath>
#include <cstring>

#include "conv_raw.hpp"

namespace dynet {

template <typename T>
void DynamicConvLayer<T>::validate() const {
  geom.validate();
  if (bank_size < 1) throw Error("dynamic conv: bank size must be >= 1");
  Shape want = bank_geometry().weight_shape();
  if (fixed_kernels.shape() != want) {
    throw Error("dynamic conv: fixed kernel bank shape " + shape_str(fixed_kernels.shape()) + " but expected " +
                shape_str(want) + " (C_out * bank_size first)");
  }
  if (bias && bias->numel() != geom.out_channels) {
    throw Error("dynamic conv: bias length " + std::to_string(bias->numel()) + " but C_out is " +
                std::to_string(geom.out_channels));
  }
}

template <typename T>
ConvGeometry DynamicConvLayer<T>::bank_geometry() const {
  ConvGeometry g = geom;
  g.out_channels = geom.out_channels * bank_size;
  return g;
}

template <typename T>
DynamicConvLayer<T> DynamicConvLayer<T>::random(const ConvGeometry& geom, std::size_t bank_size, bool with_bias,
                                                Rng& rng) {
  geom.validate();
  DynamicConvLayer layer;
  layer.geom = geom;
  layer.bank_size = bank_size;
  const double fan_in = static_cast<double>(geom.in_per_group() * geom.kernel * geom.kernel);
  const T bound = static_cast<T>(std::sqrt(6.0 / fan_in));
  layer.fixed_kernels = uniform_tensor<T>(layer.bank_geometry().weight_shape(), -bound, bound, rng);
  if (with_bias) layer.bias = Tensor<T>({geom.out_channels});
  layer.validate();
  return layer;
}

template <typename T>
Coefficients<T> Coefficients<T>::segment(std::size_t offset, std::size_t length) const {
  if (offset + length > count()) {
    throw Error("coefficient segment [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                ") exceeds row length " + std::to_string(count()));
  }
  Tensor<T> out({batch(), length});
  for (std::size_t n = 0; n < batch(); ++n) {
    auto r = row(n).subspan(offset, length);
    std::copy(r.begin(), r.end(), out.data().begin() + n * length);
  }
  return {std::move(out)};
}

template <typename T>
std::size_t CoefficientPredictor<T>::total() const {
  std::size_t t = 0;
  for (const auto& s : served) t += s.length;
  return t;
}

template <typename T>
void CoefficientPredictor<T>::validate() const {
  std::size_t expect = 0;
  for (const auto& s : served) {
    if (s.offset != expect) {
      throw Error("predictor: segment '" + s.name + "' starts at " + std::to_string(s.offset) + ", expected " +
                  std::to_string(expect));
    }
    expect += s.length;
  }
  const std::size_t first_out = two_layer() ? hidden : expect;
  if (w1.shape() != Shape{first_out, in_channels} || b1.numel() != first_out) {
    throw Error("predictor: first linear layer shape " + shape_str(w1.shape()) + " does not match");
  }
  if (two_layer() && (w2.shape() != Shape{expect, hidden} || b2.numel() != expect)) {
    throw Error("predictor: second linear layer shape " + shape_str(w2.shape()) + " does not match");
  }
}

template <typename T>
const ServedLayer& CoefficientPredictor<T>::layer(const std::string& name) const {
  for (const auto& s : served) {
    if (s.name == name) return s;
  }
  throw Error("predictor serves no layer named '" + name + "'");
}

template <typename T>
CoefficientPredictor<T> CoefficientPredictor<T>::make(
    std::size_t in_channels, std::size_t hidden, const std::vector<std::pair<std::string, std::size_t>>& layers,
    Rng& rng) {
  CoefficientPredictor p;
  p.in_channels = in_channels;
  p.hidden = hidden;
  std::size_t offset = 0;
  for (const auto& [name, len] : layers) {
    p.served.push_back({name, offset, len});
    offset += len;
  }
  const std::size_t first_out = hidden ? hidden : offset;
  const T b1 = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_channels)));
  p.w1 = uniform_tensor<T>({first_out, in_channels}, -b1, b1, rng);
  p.b1 = Tensor<T>({first_out});
  if (hidden) {
    const T b2 = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hidden)));
    p.w2 = uniform_tensor<T>({offset, hidden}, -b2, b2, rng);
    p.b2 = Tensor<T>({offset});
  }
  p.validate();
  return p;
}

template <typename T>
Coefficients<T> predict_coefficients(const CoefficientPredictor<T>& predictor, const Tensor<T>& block_input) {
  if (block_input.rank() != 4 || block_input.dim(1) != predictor.in_channels) {
    throw Error("predict_coefficients: input " + shape_str(block_input.shape()) + " but predictor expects " +
                std::to_string(predictor.in_channels) + " channels");
  }
  Tensor<T> pooled = global_avg_pool(block_input);
  Tensor<T> h = fully_connected(pooled, predictor.w1, predictor.b1);
  if (predictor.two_layer()) h = fully_connected(relu(h), predictor.w2, predictor.b2);
  return {sigmoid(h)};
}

template <typename T>
Tensor<T> fuse_kernels(const DynamicConvLayer<T>& layer, std::span<const T> eta) {
  if (eta.size() != layer.coefficient_count()) {
    throw Error("fuse_kernels: coefficient segment length " + std::to_string(eta.size()) + " but layer needs " +
                std::to_string(layer.coefficient_count()));
  }
  const std::size_t per_kernel = layer.geom.in_per_group() * layer.geom.kernel * layer.geom.kernel;
  Tensor<T> fused(layer.geom.weight_shape());
  const T* bank = layer.fixed_kernels.data().data();
  T* out = fused.data().data();
  for (std::size_t t = 0; t < layer.geom.out_channels; ++t) {
    T* dst = out + t * per_kernel;
    for (std::size_t i = 0; i < layer.bank_size; ++i) {
      const std::size_t r = t * layer.bank_size + i;
      const T c = eta[r];
      const T* src = bank + r * per_kernel;
      for (std::size_t j = 0; j < per_kernel; ++j) dst[j] += c * src[j];
    }
  }
  return fused;
}

namespace {

template <typename T>
void check_coeffs(const DynamicConvLayer<T>& layer, const Coefficients<T>& coeffs, const Tensor<T>& input) {
  layer.validate();
  if (input.rank() != 4) throw Error("dynamic conv: input must be NCHW, got " + shape_str(input.shape()));
  if (input.dim(1) != layer.geom.in_channels) {
    throw Error("dynamic conv: input " + shape_str(input.shape()) + " but layer expects " +
                std::to_string(layer.geom.in_channels) + " channels");
  }
  if (coeffs.values.rank() != 2 || coeffs.batch() != input.dim(0)) {
    throw Error("dynamic conv: coefficient rows " + shape_str(coeffs.values.shape()) + " do not align with batch " +
                std::to_string(input.dim(0)));
  }
  if (coeffs.count() != layer.coefficient_count()) {
    throw Error("dynamic conv: coefficient row length " + std::to_string(coeffs.count()) + " but layer needs " +
                std::to_string(layer.coefficient_count()));
  }
}

template <typename T>
void add_bias(Tensor<T>& out, const Tensor<T>& bias) {
  const std::size_t n_batch = out.dim(0), c = out.dim(1), plane = out.dim(2) * out.dim(3);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out.data().data() + (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias[ch];
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> forward_infer(const DynamicConvLayer<T>& layer, const Coefficients<T>& coeffs, const Tensor<T>& input,
                        ConvBackend backend) {
  check_coeffs(layer, coeffs, input);
  const std::size_t n_batch = input.dim(0);
  const std::size_t in_size = input.numel() / n_batch;
  const std::size_t ho = layer.geom.out_extent(input.dim(2)), wo = layer.geom.out_extent(input.dim(3));
  const std::size_t out_size = layer.geom.out_channels * ho * wo;
  const std::size_t row_bytes = coeffs.count() * sizeof(T);
  Tensor<T> out({n_batch, layer.geom.out_channels, ho, wo});
  std::vector<bool> done(n_batch, false);
  for (std::size_t n = 0; n < n_batch; ++n) {
    if (done[n]) continue;
    const Tensor<T> fused = fuse_kernels(layer, coeffs.row(n));
    std::vector<std::size_t> members{n};
    for (std::size_t m = n + 1; m < n_batch; ++m) {
      if (!done[m] && std::memcmp(coeffs.row(n).data(), coeffs.row(m).data(), row_bytes) == 0) members.push_back(m);
    }
    if (members.size() == 1 && backend == ConvBackend::Im2col && ho > 0 && wo > 0) {
      detail::conv2d_raw(input.data().data() + n * in_size, 1, input.dim(2), input.dim(3), fused.data().data(),
                         layer.bias ? layer.bias->data().data() : nullptr, layer.geom,
                         out.data().data() + n * out_size);
      done[n] = true;
      continue;
    }
    Tensor<T> batch({members.size(), input.dim(1), input.dim(2), input.dim(3)});
    for (std::size_t j = 0; j < members.size(); ++j) {
      std::copy_n(input.data().begin() + members[j] * in_size, in_size, batch.data().begin() + j * in_size);
    }
    const Tensor<T> y = conv2d(batch, fused, layer.bias ? &*layer.bias : nullptr, layer.geom, backend);
    for (std::size_t j = 0; j < members.size(); ++j) {
      std::copy_n(y.data().begin() + j * out_size, out_size, out.data().begin() + members[j] * out_size);
      done[members[j]] = true;
    }
  }
  return out;
}

template <typename T>
Tensor<T> combine_bank_outputs(const Tensor<T>& bank_out, const Tensor<T>& eta, std::size_t bank_size) {
  if (bank_out.rank() != 4 || bank_out.dim(1) % bank_size != 0) {
    throw Error("combine_bank_outputs: bank output " + shape_str(bank_out.shape()) + " not divisible by bank size " +
                std::to_string(bank_size));
  }
  const std::size_t n_batch = bank_out.dim(0), bank_c = bank_out.dim(1), c = bank_c / bank_size;
  const std::size_t plane = bank_out.dim(2) * bank_out.dim(3);
  if (eta.shape() != Shape{n_batch, bank_c}) {
    throw Error("combine_bank_outputs: coefficients " + shape_str(eta.shape()) + " but expected " +
                shape_str({n_batch, bank_c}));
  }
  Tensor<T> out({n_batch, c, bank_out.dim(2), bank_out.dim(3)});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t t = 0; t < c; ++t) {
      T* dst = out.data().data() + (n * c + t) * plane;
      for (std::size_t i = 0; i < bank_size; ++i) {
        const std::size_t r = t * bank_size + i;
        const T e = eta[n * bank_c + r];
        const T* src = bank_out.data().data() + (n * bank_c + r) * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] += e * src[p];
      }
    }
  }
  return out;
}

template <typename T>
CombineGrads<T> combine_bank_outputs_backward(const Tensor<T>& grad_out, const Tensor<T>& bank_out,
                                              const Tensor<T>& eta, std::size_t bank_size) {
  const std::size_t n_batch = bank_out.dim(0), bank_c = bank_out.dim(1), c = bank_c / bank_size;
  const std::size_t plane = bank_out.dim(2) * bank_out.dim(3);
  CombineGrads<T> g{Tensor<T>(bank_out.shape()), Tensor<T>(eta.shape())};
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t t = 0; t < c; ++t) {
      const T* go = grad_out.data().data() + (n * c + t) * plane;
      for (std::size_t i = 0; i < bank_size; ++i) {
        const std::size_t r = t * bank_size + i;
        const T e = eta[n * bank_c + r];
        const T* src = bank_out.data().data() + (n * bank_c + r) * plane;
        T* gb = g.bank_out.data().data() + (n * bank_c + r) * plane;
        T acc = 0;
        for (std::size_t p = 0; p < plane; ++p) {
          gb[p] = e * go[p];
          acc += go[p] * src[p];
        }
        g.eta[n * bank_c + r] = acc;
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> forward_train(const DynamicConvLayer<T>& layer, const Coefficients<T>& coeffs, const Tensor<T>& input,
                        ConvBackend backend) {
  check_coeffs(layer, coeffs, input);
  const Tensor<T> bank_out = conv2d<T>(input, layer.fixed_kernels, nullptr, layer.bank_geometry(), backend);
  Tensor<T> out = combine_bank_outputs(bank_out, coeffs.values, layer.bank_size);
  if (layer.bias) add_bias(out, *layer.bias);
  return out;
}

#define DYNET_INSTANTIATE_DYNCONV(T)                                                                        \
  template struct DynamicConvLayer<T>;                                                                      \
  template struct Coefficients<T>;                                                                          \
  template struct CoefficientPredictor<T>;                                                                  \
  template Coefficients<T> predict_coefficients(const CoefficientPredictor<T>&, const Tensor<T>&);          \
  template Tensor<T> fuse_kernels(const DynamicConvLayer<T>&, std::span<const T>);                          \
  template Tensor<T> forward_infer(const DynamicConvLayer<T>&, const Coefficients<T>&, const Tensor<T>&,    \
                                   ConvBackend);                                                            \
  template Tensor<T> forward_train(const DynamicConvLayer<T>&, const Coefficients<T>&, const Tensor<T>&,    \
                                   ConvBackend);                                                            \
  template Tensor<T> combine_bank_outputs(const Tensor<T>&, const Tensor<T>&, std::size_t);                 \
  template CombineGrads<T> combine_bank_outputs_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                         std::size_t);

DYNET_INSTANTIATE_DYNCONV(float)
DYNET_INSTANTIATE_DYNCONV(double)

}  // namespace dynet
