#include "dynet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dynet {

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return base_lr;
  const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return base_lr * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, const OptimizerConfig& config, std::size_t step) {
  const T lr = static_cast<T>(cosine_lr(config.base_lr, step, config.total_steps));
  const T mu = static_cast<T>(config.momentum);
  for (Parameter<T>* p : params) {
    if (p->grad.shape() != p->value.shape() || p->velocity.shape() != p->value.shape()) {
      throw Error("sgd_step: buffers of '" + p->name + "' do not match its value shape");
    }
    const T wd = p->decay ? static_cast<T>(config.weight_decay) : T(0);
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      p->velocity[i] = mu * p->velocity[i] + p->grad[i] + wd * p->value[i];
      p->value[i] -= lr * p->velocity[i];
    }
  }
}

template void sgd_step(std::span<Parameter<float>* const>, const OptimizerConfig&, std::size_t);
template void sgd_step(std::span<Parameter<double>* const>, const OptimizerConfig&, std::size_t);

}  // namespace dynet
