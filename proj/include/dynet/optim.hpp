#pragma once

#include <cstddef>
#include <span>

#include "dynet/autograd.hpp"

namespace dynet {

/// SGD with momentum, cosine decay and label smoothing. Defaults are the
/// large-batch recipe (batch 2048, lr 0.8) scaled linearly to batch 128.
struct OptimizerConfig {
  double base_lr = 0.05;
  std::size_t total_steps = 1;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  double label_smoothing = 0.1;
};

/// base * (1 + cos(pi * t / T)) / 2, clamped to [0, T].
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

/// v <- momentum * v + g + wd * w (wd only where `decay`); w <- w - lr(t) * v.
template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, const OptimizerConfig& config, std::size_t step);

}  // namespace dynet
