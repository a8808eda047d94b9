#include "dynet/ops.hpp"

#include <algorithm>
#include <cmath>

#include "blas.hpp"
#include "conv_raw.hpp"

namespace dynet {

namespace {

std::string dim_msg(const char* op, const char* what, std::size_t got, std::size_t want) {
  return std::string(op) + ": " + what + " = " + std::to_string(got) + " but expected " + std::to_string(want);
}

template <typename T>
void check_conv_shapes(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                       const ConvGeometry& geom) {
  geom.validate();
  if (input.rank() != 4) throw Error("conv2d: input must be rank 4 (NCHW), got " + shape_str(input.shape()));
  if (input.dim(1) != geom.in_channels) {
    throw Error(dim_msg("conv2d", "input channels (dim 1)", input.dim(1), geom.in_channels));
  }
  if (weight.rank() != 4) throw Error("conv2d: weight must be rank 4, got " + shape_str(weight.shape()));
  const Shape want = geom.weight_shape();
  const char* names[] = {"weight out_channels (dim 0)", "weight in_channels/groups (dim 1)",
                         "weight kernel height (dim 2)", "weight kernel width (dim 3)"};
  for (std::size_t i = 0; i < 4; ++i) {
    if (weight.dim(i) != want[i]) throw Error(dim_msg("conv2d", names[i], weight.dim(i), want[i]));
  }
  if (bias && bias->numel() != geom.out_channels) {
    throw Error(dim_msg("conv2d", "bias length", bias->numel(), geom.out_channels));
  }
  geom.out_extent(input.dim(2));
  geom.out_extent(input.dim(3));
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

// col layout: [(c * k + kh) * k + kw, (oh - oh0) * wo + ow] for the channels of one group,
// output rows [oh0, oh1).
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, const ConvGeometry& g, std::size_t oh0,
            std::size_t oh1, std::size_t wo, T* col) {
  const std::size_t k = g.kernel, band = (oh1 - oh0) * wo;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = x + c * h * w;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        T* row = col + ((c * k + kh) * k + kw) * band;
        for (std::size_t oh = oh0; oh < oh1; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - pad;
          T* dst = row + (oh - oh0) * wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + ih * w;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - pad;
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t h, std::size_t w, const ConvGeometry& g,
                std::size_t ho, std::size_t wo, T* x) {
  const std::size_t k = g.kernel;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = x + c * h * w;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        const T* row = col + ((c * k + kh) * k + kw) * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = plane + ih * w;
          const T* src = row + oh * wo;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - pad;
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                        const ConvGeometry& g) {
  const std::size_t n_batch = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t ho = g.out_extent(h), wo = g.out_extent(w);
  const std::size_t cin_g = g.in_per_group(), cout_g = g.out_per_group(), k = g.kernel;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  Tensor<T> out({n_batch, g.out_channels, ho, wo});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      const std::size_t group = oc / cout_g;
      for (std::size_t oh = 0; oh < ho; ++oh) {
        for (std::size_t ow = 0; ow < wo; ++ow) {
          T acc = bias ? (*bias)[oc] : T(0);
          for (std::size_t ic = 0; ic < cin_g; ++ic) {
            const std::size_t c = group * cin_g + ic;
            for (std::size_t kh = 0; kh < k; ++kh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - pad;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kw = 0; kw < k; ++kw) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - pad;
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += input.at(n, c, ih, iw) * weight.at(oc, ic, kh, kw);
              }
            }
          }
          out.at(n, oc, oh, ow) = acc;
        }
      }
    }
  }
  return out;
}

}  // namespace

namespace detail {

template <typename T>
void conv2d_raw(const T* x, std::size_t n_batch, std::size_t h, std::size_t w, const T* wt, const T* bias,
                const ConvGeometry& g, T* y) {
  const std::size_t ho = g.out_extent(h), wo = g.out_extent(w), plane = ho * wo;
  const std::size_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  const std::size_t kdim = cin_g * g.kernel * g.kernel;
  const bool pointwise = is_pointwise(g);
  // column buffer covers a band of output rows sized to stay in cache
  constexpr std::size_t col_budget = std::size_t{1} << 18;
  const std::size_t band_rows = std::clamp<std::size_t>(col_budget / std::max<std::size_t>(1, kdim * wo), 1, ho);
  std::vector<T> col(pointwise ? 0 : kdim * band_rows * wo);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const T* xg = x + (n * g.in_channels + grp * cin_g) * h * w;
      T* yg = y + (n * g.out_channels + grp * cout_g) * plane;
      const T* wg = wt + grp * cout_g * kdim;
      if (pointwise) {
        detail::gemm(false, false, cout_g, plane, kdim, T(1), wg, kdim, xg, plane, T(0), yg, plane);
        continue;
      }
      for (std::size_t oh0 = 0; oh0 < ho; oh0 += band_rows) {
        const std::size_t oh1 = std::min(ho, oh0 + band_rows), cols = (oh1 - oh0) * wo;
        im2col(xg, cin_g, h, w, g, oh0, oh1, wo, col.data());
        detail::gemm(false, false, cout_g, cols, kdim, T(1), wg, kdim, col.data(), cols, T(0), yg + oh0 * wo,
                     plane);
      }
    }
    if (bias) {
      for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
        T* yp = y + (n * g.out_channels + oc) * plane;
        const T b = bias[oc];
        for (std::size_t p = 0; p < plane; ++p) yp[p] += b;
      }
    }
  }
}

template void conv2d_raw(const float*, std::size_t, std::size_t, std::size_t, const float*, const float*,
                         const ConvGeometry&, float*);
template void conv2d_raw(const double*, std::size_t, std::size_t, std::size_t, const double*, const double*,
                         const ConvGeometry&, double*);

}  // namespace detail

namespace {

template <typename T>
Tensor<T> conv2d_im2col(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                        const ConvGeometry& g) {
  const std::size_t h = input.dim(2), w = input.dim(3);
  Tensor<T> out({input.dim(0), g.out_channels, g.out_extent(h), g.out_extent(w)});
  detail::conv2d_raw(input.data().data(), input.dim(0), h, w, weight.data().data(),
                     bias ? bias->data().data() : nullptr, g, out.data().data());
  return out;
}

template <typename T>
void check_grad_out(const Tensor<T>& grad_out, std::size_t n, const ConvGeometry& g, std::size_t ho,
                    std::size_t wo) {
  const Shape want{n, g.out_channels, ho, wo};
  if (grad_out.shape() != want) {
    throw Error("conv2d backward: grad_out shape " + shape_str(grad_out.shape()) + " but expected " +
                shape_str(want));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias, const ConvGeometry& geom,
                 ConvBackend backend) {
  check_conv_shapes(input, weight, bias, geom);
  return backend == ConvBackend::Direct ? conv2d_direct(input, weight, bias, geom)
                                        : conv2d_im2col(input, weight, bias, geom);
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, const ConvGeometry& g,
                                const Shape& input_shape) {
  Tensor<T> grad_in(input_shape);
  check_conv_shapes(grad_in, weight, static_cast<const Tensor<T>*>(nullptr), g);
  const std::size_t n_batch = input_shape[0], h = input_shape[2], w = input_shape[3];
  const std::size_t ho = g.out_extent(h), wo = g.out_extent(w), plane = ho * wo;
  check_grad_out(grad_out, n_batch, g, ho, wo);
  const std::size_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  const std::size_t kdim = cin_g * g.kernel * g.kernel;
  const bool pointwise = is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : kdim * plane);
  const T* gy = grad_out.data().data();
  const T* wt = weight.data().data();
  T* gx = grad_in.data().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const T* gyg = gy + (n * g.out_channels + grp * cout_g) * plane;
      T* gxg = gx + (n * g.in_channels + grp * cin_g) * h * w;
      if (pointwise) {
        detail::gemm(true, false, kdim, plane, cout_g, T(1), wt + grp * cout_g * kdim, kdim, gyg, plane, T(0), gxg,
                     plane);
      } else {
        detail::gemm(true, false, kdim, plane, cout_g, T(1), wt + grp * cout_g * kdim, kdim, gyg, plane, T(0),
                     col.data(), plane);
        col2im_add(col.data(), cin_g, h, w, g, ho, wo, gxg);
      }
    }
  }
  return grad_in;
}

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& input, const Tensor<T>& grad_out, const ConvGeometry& g) {
  Tensor<T> grad_w(g.weight_shape());
  check_conv_shapes(input, grad_w, static_cast<const Tensor<T>*>(nullptr), g);
  const std::size_t n_batch = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t ho = g.out_extent(h), wo = g.out_extent(w), plane = ho * wo;
  check_grad_out(grad_out, n_batch, g, ho, wo);
  const std::size_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  const std::size_t kdim = cin_g * g.kernel * g.kernel;
  const bool pointwise = is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : kdim * plane);
  const T* x = input.data().data();
  const T* gy = grad_out.data().data();
  T* gw = grad_w.data().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const T* xg = x + (n * g.in_channels + grp * cin_g) * h * w;
      const T* src = xg;
      if (!pointwise) {
        im2col(xg, cin_g, h, w, g, 0, ho, wo, col.data());
        src = col.data();
      }
      const T* gyg = gy + (n * g.out_channels + grp * cout_g) * plane;
      detail::gemm(false, true, cout_g, kdim, plane, T(1), gyg, plane, src, plane, T(1), gw + grp * cout_g * kdim,
                   kdim);
    }
  }
  return grad_w;
}

template <typename T>
Tensor<T> channel_sum(const Tensor<T>& grad_out) {
  if (grad_out.rank() != 4) throw Error("channel_sum: expected NCHW, got " + shape_str(grad_out.shape()));
  const std::size_t n_batch = grad_out.dim(0), c = grad_out.dim(1), plane = grad_out.dim(2) * grad_out.dim(3);
  Tensor<T> out({c});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = grad_out.data().data() + (n * c + ch) * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      out[ch] += acc;
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() != 4) throw Error("global_avg_pool: expected NCHW, got " + shape_str(input.shape()));
  const std::size_t n_batch = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  Tensor<T> out({n_batch, c, 1, 1});
  for (std::size_t i = 0; i < n_batch * c; ++i) {
    const T* p = input.data().data() + i * plane;
    T acc = 0;
    for (std::size_t j = 0; j < plane; ++j) acc += p[j];
    out[i] = acc / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (input.rank() < 2) throw Error("fully_connected: input must have a batch dimension");
  const std::size_t n_batch = input.dim(0);
  const std::size_t f_in = input.numel() / n_batch;
  if (weight.rank() != 2) throw Error("fully_connected: weight must be rank 2, got " + shape_str(weight.shape()));
  if (weight.dim(1) != f_in) throw Error(dim_msg("fully_connected", "input features", f_in, weight.dim(1)));
  const std::size_t f_out = weight.dim(0);
  if (bias.numel() != f_out) throw Error(dim_msg("fully_connected", "bias length", bias.numel(), f_out));
  Tensor<T> out({n_batch, f_out});
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* x = input.data().data() + n * f_in;
    for (std::size_t o = 0; o < f_out; ++o) {
      const T* wr = weight.data().data() + o * f_in;
      T acc = 0;
      for (std::size_t i = 0; i < f_in; ++i) acc += wr[i] * x[i];
      out[n * f_out + o] = acc + bias[o];
    }
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) {
    if (v >= 0) {
      v = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
BatchNormStats<T>::BatchNormStats(std::size_t channels)
    : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}

template <typename T>
void BatchNormStats<T>::init_identity() {
  std::fill(running_mean.data().begin(), running_mean.data().end(), T(0));
  std::fill(running_var.data().begin(), running_var.data().end(), T(1));
  initialized = true;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift, BatchNormStats<T>& stats,
                     Mode mode, BatchNormCache<T>* cache) {
  if (input.rank() != 4) throw Error("batch_norm: expected NCHW, got " + shape_str(input.shape()));
  const std::size_t n_batch = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (scale.numel() != c || shift.numel() != c) {
    throw Error(dim_msg("batch_norm", "scale/shift length", scale.numel(), c));
  }
  if (stats.running_mean.numel() != c || stats.running_var.numel() != c) {
    throw Error(dim_msg("batch_norm", "running stats length", stats.running_mean.numel(), c));
  }
  if (mode == Mode::Eval && !stats.initialized) {
    throw Error("batch_norm: eval mode requires running statistics (train first or call init_identity)");
  }
  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::Train) {
    const T count = static_cast<T>(n_batch * plane);
    if (!stats.initialized) stats.init_identity();
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum = 0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* p = input.data().data() + (n * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const T mu = sum / count;
      T sq = 0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* p = input.data().data() + (n * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const T var = sq / count;
      mean[ch] = mu;
      inv_std[ch] = T(1) / std::sqrt(var + stats.eps);
      stats.running_mean[ch] = stats.momentum * stats.running_mean[ch] + (T(1) - stats.momentum) * mu;
      stats.running_var[ch] = stats.momentum * stats.running_var[ch] + (T(1) - stats.momentum) * var;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(stats.running_var[ch] + stats.eps);
    }
  }
  Tensor<T> out(input.shape());
  Tensor<T> normalized;
  if (cache) normalized = Tensor<T>(input.shape());
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (input[base + i] - mean[ch]) * inv_std[ch];
        if (cache) normalized[base + i] = xh;
        out[base + i] = xh * scale[ch] + shift[ch];
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& scale,
                                      const BatchNormCache<T>& cache) {
  const Tensor<T>& xh = cache.normalized;
  if (grad_out.shape() != xh.shape()) {
    throw Error("batch_norm backward: grad shape " + shape_str(grad_out.shape()) + " vs " + shape_str(xh.shape()));
  }
  const std::size_t n_batch = xh.dim(0), c = xh.dim(1), plane = xh.dim(2) * xh.dim(3);
  const T count = static_cast<T>(n_batch * plane);
  BatchNormGrads<T> g{Tensor<T>(xh.shape()), Tensor<T>({c}), Tensor<T>({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    T sum_g = 0, sum_gx = 0;
    for (std::size_t n = 0; n < n_batch; ++n) {
      const std::size_t base = (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += grad_out[base + i];
        sum_gx += grad_out[base + i] * xh[base + i];
      }
    }
    g.shift[ch] = sum_g;
    g.scale[ch] = sum_gx;
    const T k = scale[ch] * cache.inv_std[ch];
    for (std::size_t n = 0; n < n_batch; ++n) {
      const std::size_t base = (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (cache.mode == Mode::Train) {
          g.input[base + i] = k * (grad_out[base + i] - sum_g / count - xh[base + i] * sum_gx / count);
        } else {
          g.input[base + i] = k * grad_out[base + i];
        }
      }
    }
  }
  return g;
}

#define DYNET_INSTANTIATE_OPS(T)                                                                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const ConvGeometry&,          \
                            ConvBackend);                                                                      \
  template Tensor<T> conv2d_backward_input(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&,             \
                                           const Shape&);                                                      \
  template Tensor<T> conv2d_backward_weight(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);           \
  template Tensor<T> channel_sum(const Tensor<T>&);                                                            \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                        \
  template Tensor<T> fully_connected(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                \
  template Tensor<T> relu(const Tensor<T>&);                                                                   \
  template struct BatchNormStats<T>;                                                                           \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormStats<T>&, Mode, \
                                BatchNormCache<T>*);                                                           \
  template BatchNormGrads<T> batch_norm_backward(const Tensor<T>&, const Tensor<T>&, const BatchNormCache<T>&);

DYNET_INSTANTIATE_OPS(float)
DYNET_INSTANTIATE_OPS(double)

}  // namespace dynet
