#pragma once

#include <cstdint>
#include <random>

#include "dynet/tensor.hpp"

namespace dynet {

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> uniform_tensor(Shape shape, T lo, T hi, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, T mean, T stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace dynet
