#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dynet/ops.hpp"
#include "dynet/tensor.hpp"

namespace dynet {

/// A trainable tensor with its gradient and SGD momentum buffer.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> velocity;
  bool decay = true;  ///< false for batch-norm scale/shift and predictor biases

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool wd = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), velocity(value.shape()), decay(wd) {}

  void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), T(0)); }
};

using NodeId = std::size_t;

/// Eager reverse-mode tape. Every op evaluates immediately and records how to
/// push gradients back to its inputs; nodes are appended in topological
/// order, so backward is a single reverse sweep.
template <typename T>
class Graph {
 public:
  /// Leaf bound to a parameter; backward adds into `p.grad`.
  NodeId parameter(Parameter<T>& p);
  NodeId constant(Tensor<T> value);

  NodeId conv2d(NodeId x, NodeId weight, const ConvGeometry& geom);
  NodeId add_channel_bias(NodeId x, NodeId bias);
  NodeId bank_combine(NodeId bank_out, NodeId eta, std::size_t bank_size);
  /// Per-sample fused-kernel dynamic conv (the inference path), differentiable.
  NodeId dynamic_conv_fused(NodeId x, NodeId bank, NodeId eta, const ConvGeometry& geom, std::size_t bank_size);
  NodeId batch_norm(NodeId x, NodeId scale, NodeId shift, BatchNormStats<T>& stats, Mode mode);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  /// [N, C, H, W] -> [N, C]
  NodeId global_avg_pool(NodeId x);
  NodeId linear(NodeId x, NodeId weight, NodeId bias);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId sum(NodeId x);
  NodeId slice_channels(NodeId x, std::size_t begin, std::size_t count);
  NodeId concat_channels(NodeId a, NodeId b);
  NodeId channel_shuffle(NodeId x, std::size_t groups);
  NodeId slice_columns(NodeId x, std::size_t begin, std::size_t count);
  NodeId smoothed_cross_entropy(NodeId logits, std::span<const int> labels, T smoothing);

  const Tensor<T>& value(NodeId id) const;
  /// Gradient of the last backward's loss w.r.t. node `id` (zeros if unreached).
  Tensor<T> grad(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Requires a scalar loss node that has been evaluated on this tape.
  void backward(NodeId loss);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<NodeId> inputs;
    std::function<void(Graph&, NodeId)> backward;
    Parameter<T>* param = nullptr;
  };

  NodeId push(Tensor<T> value, std::vector<NodeId> inputs, std::function<void(Graph&, NodeId)> backward);
  const Node& node(NodeId id) const;
  void accumulate(NodeId id, const Tensor<T>& g);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// Mean over the batch of the cross entropy between softmax(logits) and the
/// smoothed target (1 - eps) * onehot + eps / K.
template <typename T>
T smoothed_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, T smoothing,
                         Tensor<T>* grad = nullptr);

}  // namespace dynet
