#include "dynet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "dynet/dynconv.hpp"

namespace dynet {

namespace {

template <typename T>
Tensor<T> sample_slice(const Tensor<T>& x, std::size_t n) {
  const std::size_t size = x.numel() / x.dim(0);
  Shape s = x.shape();
  s[0] = 1;
  std::vector<T> data(x.data().begin() + n * size, x.data().begin() + (n + 1) * size);
  return Tensor<T>(std::move(s), std::move(data));
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
NodeId Graph<T>::push(Tensor<T> value, std::vector<NodeId> inputs, std::function<void(Graph&, NodeId)> backward) {
  for (NodeId in : inputs) node(in);
  nodes_.push_back({std::move(value), Tensor<T>(), std::move(inputs), std::move(backward), nullptr});
  return nodes_.size() - 1;
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(NodeId id) const {
  if (id >= nodes_.size()) throw Error("graph: node " + std::to_string(id) + " has not been evaluated");
  return nodes_[id];
}

template <typename T>
const Tensor<T>& Graph<T>::value(NodeId id) const {
  return node(id).value;
}

template <typename T>
Tensor<T> Graph<T>::grad(NodeId id) const {
  const Node& n = node(id);
  return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
}

template <typename T>
void Graph<T>::accumulate(NodeId id, const Tensor<T>& g) {
  Node& n = nodes_[id];
  if (g.shape() != n.value.shape()) {
    throw Error("graph: gradient shape " + shape_str(g.shape()) + " does not match value " +
                shape_str(n.value.shape()));
  }
  if (n.grad.empty()) {
    n.grad = g;
  } else {
    add_into(n.grad, g);
  }
}

template <typename T>
NodeId Graph<T>::parameter(Parameter<T>& p) {
  NodeId id = push(p.value, {}, nullptr);
  nodes_[id].param = &p;
  return id;
}

template <typename T>
NodeId Graph<T>::constant(Tensor<T> value) {
  return push(std::move(value), {}, nullptr);
}

template <typename T>
NodeId Graph<T>::conv2d(NodeId x, NodeId weight, const ConvGeometry& geom) {
  Tensor<T> y = dynet::conv2d<T>(value(x), value(weight), nullptr, geom);
  return push(std::move(y), {x, weight}, [geom](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    const NodeId xi = n.inputs[0], wi = n.inputs[1];
    g.accumulate(xi, conv2d_backward_input(n.grad, g.nodes_[wi].value, geom, g.nodes_[xi].value.shape()));
    g.accumulate(wi, conv2d_backward_weight(g.nodes_[xi].value, n.grad, geom));
  });
}

template <typename T>
NodeId Graph<T>::add_channel_bias(NodeId x, NodeId bias) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& bv = value(bias);
  if (xv.rank() != 4 || bv.numel() != xv.dim(1)) {
    throw Error("add_channel_bias: bias length " + std::to_string(bv.numel()) + " vs input " + shape_str(xv.shape()));
  }
  Tensor<T> y = xv;
  const std::size_t c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += bv[(i / plane) % c];
  return push(std::move(y), {x, bias}, [](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    g.accumulate(n.inputs[0], n.grad);
    g.accumulate(n.inputs[1], channel_sum(n.grad).reshaped(g.nodes_[n.inputs[1]].value.shape()));
  });
}

template <typename T>
NodeId Graph<T>::bank_combine(NodeId bank_out, NodeId eta, std::size_t bank_size) {
  Tensor<T> y = combine_bank_outputs(value(bank_out), value(eta), bank_size);
  return push(std::move(y), {bank_out, eta}, [bank_size](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    auto grads = combine_bank_outputs_backward(n.grad, g.nodes_[n.inputs[0]].value, g.nodes_[n.inputs[1]].value,
                                               bank_size);
    g.accumulate(n.inputs[0], grads.bank_out);
    g.accumulate(n.inputs[1], grads.eta);
  });
}

template <typename T>
NodeId Graph<T>::dynamic_conv_fused(NodeId x, NodeId bank, NodeId eta, const ConvGeometry& geom,
                                    std::size_t bank_size) {
  DynamicConvLayer<T> layer{geom, bank_size, value(bank), std::nullopt};
  Tensor<T> y = forward_infer(layer, Coefficients<T>{value(eta)}, value(x));
  return push(std::move(y), {x, bank, eta}, [geom, bank_size](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    const Tensor<T>& xv = g.nodes_[n.inputs[0]].value;
    const Tensor<T>& bv = g.nodes_[n.inputs[1]].value;
    const Tensor<T>& ev = g.nodes_[n.inputs[2]].value;
    DynamicConvLayer<T> layer{geom, bank_size, bv, std::nullopt};
    const std::size_t n_batch = xv.dim(0), count = ev.dim(1);
    const std::size_t per_kernel = geom.in_per_group() * geom.kernel * geom.kernel;
    Tensor<T> gx(xv.shape()), gbank(bv.shape()), geta(ev.shape());
    for (std::size_t s = 0; s < n_batch; ++s) {
      const Tensor<T> xs = sample_slice(xv, s);
      const Tensor<T> gys = sample_slice(n.grad, s);
      const auto eta_row = ev.data().subspan(s * count, count);
      const Tensor<T> fused = fuse_kernels(layer, eta_row);
      const Tensor<T> gxs = conv2d_backward_input(gys, fused, geom, xs.shape());
      std::copy(gxs.data().begin(), gxs.data().end(), gx.data().begin() + s * xs.numel());
      const Tensor<T> gfused = conv2d_backward_weight(xs, gys, geom);
      for (std::size_t t = 0; t < geom.out_channels; ++t) {
        const T* gf = gfused.data().data() + t * per_kernel;
        for (std::size_t i = 0; i < bank_size; ++i) {
          const std::size_t r = t * bank_size + i;
          const T* w = bv.data().data() + r * per_kernel;
          T* gw = gbank.data().data() + r * per_kernel;
          T acc = 0;
          for (std::size_t j = 0; j < per_kernel; ++j) {
            acc += gf[j] * w[j];
            gw[j] += eta_row[r] * gf[j];
          }
          geta[s * count + r] = acc;
        }
      }
    }
    g.accumulate(n.inputs[0], gx);
    g.accumulate(n.inputs[1], gbank);
    g.accumulate(n.inputs[2], geta);
  });
}

template <typename T>
NodeId Graph<T>::batch_norm(NodeId x, NodeId scale, NodeId shift, BatchNormStats<T>& stats, Mode mode) {
  auto cache = std::make_shared<BatchNormCache<T>>();
  Tensor<T> y = dynet::batch_norm(value(x), value(scale), value(shift), stats, mode, cache.get());
  return push(std::move(y), {x, scale, shift}, [cache](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    auto grads = batch_norm_backward(n.grad, g.nodes_[n.inputs[1]].value, *cache);
    g.accumulate(n.inputs[0], grads.input);
    g.accumulate(n.inputs[1], grads.scale);
    g.accumulate(n.inputs[2], grads.shift);
  });
}

template <typename T>
NodeId Graph<T>::relu(NodeId x) {
  return push(dynet::relu(value(x)), {x}, [](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    Tensor<T> gx = n.grad;
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      if (n.value[i] <= T(0)) gx[i] = T(0);
    }
    g.accumulate(n.inputs[0], gx);
  });
}

template <typename T>
NodeId Graph<T>::sigmoid(NodeId x) {
  return push(dynet::sigmoid(value(x)), {x}, [](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    Tensor<T> gx = n.grad;
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] *= n.value[i] * (T(1) - n.value[i]);
    g.accumulate(n.inputs[0], gx);
  });
}

template <typename T>
NodeId Graph<T>::global_avg_pool(NodeId x) {
  const Tensor<T>& xv = value(x);
  Tensor<T> y = dynet::global_avg_pool(xv).reshaped({xv.dim(0), xv.dim(1)});
  return push(std::move(y), {x}, [](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    const Shape& xs = g.nodes_[n.inputs[0]].value.shape();
    const std::size_t plane = xs[2] * xs[3];
    Tensor<T> gx(xs);
    const T inv = T(1) / static_cast<T>(plane);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = n.grad[i / plane] * inv;
    g.accumulate(n.inputs[0], gx);
  });
}

template <typename T>
NodeId Graph<T>::linear(NodeId x, NodeId weight, NodeId bias) {
  Tensor<T> y = fully_connected(value(x), value(weight), value(bias));
  return push(std::move(y), {x, weight, bias}, [](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    const Tensor<T>& xv = g.nodes_[n.inputs[0]].value;
    const Tensor<T>& wv = g.nodes_[n.inputs[1]].value;
    const std::size_t n_batch = xv.dim(0), f_in = wv.dim(1), f_out = wv.dim(0);
    Tensor<T> gx(xv.shape()), gw(wv.shape()), gb({f_out});
    for (std::size_t s = 0; s < n_batch; ++s) {
      for (std::size_t o = 0; o < f_out; ++o) {
        const T go = n.grad[s * f_out + o];
        gb[o] += go;
        for (std::size_t i = 0; i < f_in; ++i) {
          gw[o * f_in + i] += go * xv[s * f_in + i];
          gx[s * f_in + i] += go * wv[o * f_in + i];
        }
      }
    }
    g.accumulate(n.inputs[0], gx);
    g.accumulate(n.inputs[1], gw);
    g.accumulate(n.inputs[2], gb.reshaped(g.nodes_[n.inputs[2]].value.shape()));
  });
}

template <typename T>
NodeId Graph<T>::add(NodeId a, NodeId b) {
  if (value(a).shape() != value(b).shape()) {
    throw Error("add: shape mismatch " + shape_str(value(a).shape()) + " vs " + shape_str(value(b).shape()));
  }
  Tensor<T> y = value(a);
  add_into(y, value(b));
  return push(std::move(y), {a, b}, [](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    g.accumulate(n.inputs[0], n.grad);
    g.accumulate(n.inputs[1], n.grad);
  });
}

template <typename T>
NodeId Graph<T>::mul(NodeId a, NodeId b) {
  if (value(a).shape() != value(b).shape()) {
    throw Error("mul: shape mismatch " + shape_str(value(a).shape()) + " vs " + shape_str(value(b).shape()));
  }
  Tensor<T> y = value(a);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= value(b)[i];
  return push(std::move(y), {a, b}, [](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    Tensor<T> ga = n.grad, gb = n.grad;
    for (std::size_t i = 0; i < ga.numel(); ++i) {
      ga[i] *= g.nodes_[n.inputs[1]].value[i];
      gb[i] *= g.nodes_[n.inputs[0]].value[i];
    }
    g.accumulate(n.inputs[0], ga);
    g.accumulate(n.inputs[1], gb);
  });
}

template <typename T>
NodeId Graph<T>::sum(NodeId x) {
  T acc = 0;
  for (T v : value(x).data()) acc += v;
  return push(Tensor<T>::scalar(acc), {x}, [](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    g.accumulate(n.inputs[0], Tensor<T>(g.nodes_[n.inputs[0]].value.shape(), n.grad[0]));
  });
}

template <typename T>
NodeId Graph<T>::slice_channels(NodeId x, std::size_t begin, std::size_t count) {
  const Tensor<T>& xv = value(x);
  if (xv.rank() != 4 || count == 0 || begin + count > xv.dim(1)) {
    throw Error("slice_channels: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of range for " +
                shape_str(xv.shape()));
  }
  const std::size_t c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor<T> y({xv.dim(0), count, xv.dim(2), xv.dim(3)});
  for (std::size_t n = 0; n < xv.dim(0); ++n) {
    std::copy_n(xv.data().begin() + (n * c + begin) * plane, count * plane, y.data().begin() + n * count * plane);
  }
  return push(std::move(y), {x}, [begin, count](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    const Shape& xs = g.nodes_[n.inputs[0]].value.shape();
    const std::size_t c = xs[1], plane = xs[2] * xs[3];
    Tensor<T> gx(xs);
    for (std::size_t s = 0; s < xs[0]; ++s) {
      std::copy_n(n.grad.data().begin() + s * count * plane, count * plane,
                  gx.data().begin() + (s * c + begin) * plane);
    }
    g.accumulate(n.inputs[0], gx);
  });
}

template <typename T>
NodeId Graph<T>::concat_channels(NodeId a, NodeId b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
      av.dim(3) != bv.dim(3)) {
    throw Error("concat_channels: incompatible " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t ca = av.dim(1), cb = bv.dim(1), plane = av.dim(2) * av.dim(3);
  Tensor<T> y({av.dim(0), ca + cb, av.dim(2), av.dim(3)});
  for (std::size_t n = 0; n < av.dim(0); ++n) {
    std::copy_n(av.data().begin() + n * ca * plane, ca * plane, y.data().begin() + n * (ca + cb) * plane);
    std::copy_n(bv.data().begin() + n * cb * plane, cb * plane, y.data().begin() + (n * (ca + cb) + ca) * plane);
  }
  return push(std::move(y), {a, b}, [ca, cb, plane](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    const std::size_t n_batch = n.value.dim(0);
    Tensor<T> ga(g.nodes_[n.inputs[0]].value.shape()), gb(g.nodes_[n.inputs[1]].value.shape());
    for (std::size_t s = 0; s < n_batch; ++s) {
      std::copy_n(n.grad.data().begin() + s * (ca + cb) * plane, ca * plane, ga.data().begin() + s * ca * plane);
      std::copy_n(n.grad.data().begin() + (s * (ca + cb) + ca) * plane, cb * plane,
                  gb.data().begin() + s * cb * plane);
    }
    g.accumulate(n.inputs[0], ga);
    g.accumulate(n.inputs[1], gb);
  });
}

template <typename T>
NodeId Graph<T>::channel_shuffle(NodeId x, std::size_t groups) {
  const Tensor<T>& xv = value(x);
  if (xv.rank() != 4 || groups == 0 || xv.dim(1) % groups != 0) {
    throw Error("channel_shuffle: " + std::to_string(groups) + " groups do not divide " + shape_str(xv.shape()));
  }
  const std::size_t c = xv.dim(1), per = c / groups, plane = xv.dim(2) * xv.dim(3);
  // output channel j * groups + gi takes input channel gi * per + j
  auto src_of = [=](std::size_t out_c) { return (out_c % groups) * per + out_c / groups; };
  Tensor<T> y(xv.shape());
  for (std::size_t n = 0; n < xv.dim(0); ++n) {
    for (std::size_t oc = 0; oc < c; ++oc) {
      std::copy_n(xv.data().begin() + (n * c + src_of(oc)) * plane, plane, y.data().begin() + (n * c + oc) * plane);
    }
  }
  return push(std::move(y), {x}, [=](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    Tensor<T> gx(n.value.shape());
    for (std::size_t s = 0; s < n.value.dim(0); ++s) {
      for (std::size_t oc = 0; oc < c; ++oc) {
        std::copy_n(n.grad.data().begin() + (s * c + oc) * plane, plane,
                    gx.data().begin() + (s * c + src_of(oc)) * plane);
      }
    }
    g.accumulate(n.inputs[0], gx);
  });
}

template <typename T>
NodeId Graph<T>::slice_columns(NodeId x, std::size_t begin, std::size_t count) {
  const Tensor<T>& xv = value(x);
  if (xv.rank() != 2 || begin + count > xv.dim(1) || count == 0) {
    throw Error("slice_columns: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of range for " +
                shape_str(xv.shape()));
  }
  Tensor<T> y = Coefficients<T>{xv}.segment(begin, count).values;
  return push(std::move(y), {x}, [begin, count](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    const Shape& xs = g.nodes_[n.inputs[0]].value.shape();
    Tensor<T> gx(xs);
    for (std::size_t r = 0; r < xs[0]; ++r) {
      std::copy_n(n.grad.data().begin() + r * count, count, gx.data().begin() + r * xs[1] + begin);
    }
    g.accumulate(n.inputs[0], gx);
  });
}

template <typename T>
T smoothed_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, T smoothing, Tensor<T>* grad) {
  if (logits.rank() != 2) throw Error("smoothed_cross_entropy: logits must be [N, K], got " + shape_str(logits.shape()));
  const std::size_t n_batch = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n_batch) {
    throw Error("smoothed_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                std::to_string(n_batch));
  }
  if (grad) *grad = Tensor<T>(logits.shape());
  const T off = smoothing / static_cast<T>(k);
  const T on = T(1) - smoothing + off;
  T total = 0;
  std::vector<T> logp(k);
  for (std::size_t n = 0; n < n_batch; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw Error("smoothed_cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    const T* z = logits.data().data() + n * k;
    const T zmax = *std::max_element(z, z + k);
    T se = 0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - zmax);
    const T lse = zmax + std::log(se);
    for (std::size_t j = 0; j < k; ++j) {
      logp[j] = z[j] - lse;
      const T target = static_cast<std::size_t>(label) == j ? on : off;
      total -= target * logp[j];
      if (grad) (*grad)[n * k + j] = (std::exp(logp[j]) - target) / static_cast<T>(n_batch);
    }
  }
  return total / static_cast<T>(n_batch);
}

template <typename T>
NodeId Graph<T>::smoothed_cross_entropy(NodeId logits, std::span<const int> labels, T smoothing) {
  auto g_logits = std::make_shared<Tensor<T>>();
  const T loss = dynet::smoothed_cross_entropy(value(logits), labels, smoothing, g_logits.get());
  return push(Tensor<T>::scalar(loss), {logits}, [g_logits](Graph& g, NodeId self) {
    const Node& n = g.nodes_[self];
    Tensor<T> gx = *g_logits;
    for (auto& v : gx.data()) v *= n.grad[0];
    g.accumulate(n.inputs[0], gx);
  });
}

template <typename T>
void Graph<T>::backward(NodeId loss) {
  const Node& l = node(loss);
  if (l.value.numel() != 1) throw Error("backward: loss must be scalar, got " + shape_str(l.value.shape()));
  if (backward_done_) throw Error("backward: this tape has already been differentiated");
  backward_done_ = true;
  nodes_[loss].grad = Tensor<T>(l.value.shape(), T(1));
  for (NodeId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) add_into(n.param->grad, n.grad);
  }
}

template class Graph<float>;
template class Graph<double>;
template float smoothed_cross_entropy(const Tensor<float>&, std::span<const int>, float, Tensor<float>*);
template double smoothed_cross_entropy(const Tensor<double>&, std::span<const int>, double, Tensor<double>*);

}  // namespace dynet
