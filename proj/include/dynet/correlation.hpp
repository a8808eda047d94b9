#pragma once

#include <span>
#include <string>
#include <vector>

#include "dynet/tensor.hpp"

namespace dynet {

/// Pearson product-moment correlation. Throws on length < 2, unequal
/// lengths, or a zero-variance argument.
double pearson(std::span<const double> u, std::span<const double> v);

/// |r| thresholds separating no / weak / middle / strong correlation.
struct CorrelationBands {
  double weak = 0.2;
  double middle = 0.4;
  double strong = 0.6;
};

struct CorrelationHistogram {
  std::vector<double> edges;          ///< bins + 1 edges spanning [-1, 1]
  std::vector<std::size_t> counts;    ///< r == 1 lands in the last bin
  std::size_t none = 0, weak = 0, middle = 0, strong = 0;
  std::size_t pairs = 0;              ///< pairs actually measured
  std::size_t skipped_channels = 0;   ///< zero-variance channels
  std::size_t skipped_pairs = 0;      ///< pairs touching a skipped channel
  CorrelationBands bands;

  /// Line-oriented table: a `bands` line, one `bin lo hi count` line per
  /// bin, then `tally N W M S` and `pairs measured skipped`.
  std::string to_text() const;
};

/// Flattens each channel of NCHW features over (N, H, W) and bins the
/// correlation of every channel pair.
template <typename T>
CorrelationHistogram correlation_histogram(const Tensor<T>& features, std::size_t bins = 20,
                                           CorrelationBands bands = {});

}  // namespace dynet
