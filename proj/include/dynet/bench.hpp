#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dynet {

struct BenchConfig {
  std::size_t bank_size = 6;
  std::vector<std::size_t> channels{64, 128};
  std::vector<std::size_t> input_sizes{56, 112, 224};
  std::size_t kernel = 1;
  std::size_t batch = 1;
  std::size_t warmup = 2;
  std::size_t repeats = 7;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Median wall-clock milliseconds of one dynamic layer (C -> C) per path.
struct BenchRow {
  std::size_t channels = 0;
  std::size_t input_size = 0;
  std::size_t bank_size = 0;
  double fused_ms = 0;    ///< fuse kernels per sample, then one conv
  double unfused_ms = 0;  ///< whole-bank conv, then per-sample reduction
  /// 1 - fused / unfused
  double reduced_ratio() const { return 1.0 - fused_ms / unfused_ms; }
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchRow> rows;

  /// Fused path faster in every row.
  bool fused_always_faster() const;
  /// For each channel count, the reduced ratio never drops as input grows.
  bool ratio_nondecreasing() const;
  /// Header line then `channels size bank fused_ms unfused_ms reduced_pct`.
  std::string to_text() const;
};

/// Median of `values` (mean of the middle two for even counts).
double median(std::vector<double> values);

/// Times both paths in f32 on seeded random weights, inputs and
/// coefficients. Runs warmup iterations first, then `repeats` timed ones.
BenchReport run_bench(const BenchConfig& config);

}  // namespace dynet
