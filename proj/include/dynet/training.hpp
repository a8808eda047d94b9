#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dynet/arch.hpp"
#include "dynet/data.hpp"
#include "dynet/optim.hpp"

namespace dynet {

/// Training run settings, read from `key = value` lines (`#` starts a
/// comment). Keys: epochs, batch_size, base_lr, momentum, weight_decay,
/// label_smoothing, seed, crop_padding, flip, eval_batch.
struct TrainConfig {
  std::size_t epochs = 90;
  std::size_t batch_size = 128;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  double label_smoothing = 0.1;
  std::uint64_t seed = 0;
  std::size_t crop_padding = 4;
  bool flip = true;
  std::size_t eval_batch = 500;

  void validate() const;
  std::string to_text() const;
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

/// One optimizer step: learning rate used, batch loss and batch top-1.
struct MetricRow {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  double top1 = 0;
};

/// `step lr loss top1`, space separated.
std::string format_metric_line(const MetricRow& row);

/// SGD over `data` through the feature-fusion path. Batch order,
/// augmentation and the network initialization all derive from
/// `config.seed`; single-threaded runs are bit-reproducible. `on_step` sees
/// every row as it is produced.
template <typename T>
std::vector<MetricRow> train_network(Network<T>& net, const Dataset& data, const TrainConfig& config,
                                     const std::function<void(const MetricRow&)>& on_step = {});

/// Percentage of samples whose arg-max logit equals the label (eval mode).
template <typename T>
double evaluate_top1(Network<T>& net, const Dataset& data, std::size_t batch = 500,
                     FusionPath path = FusionPath::KernelFusion);

}  // namespace dynet
