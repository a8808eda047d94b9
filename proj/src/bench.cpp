#include "dynet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

#include "dynet/dynconv.hpp"
#include "dynet/random.hpp"

namespace dynet {

void BenchConfig::validate() const {
  if (bank_size == 0) throw Error("bench: bank size must be >= 1");
  if (channels.empty() || input_sizes.empty()) throw Error("bench: need at least one channel count and input size");
  if (warmup < 2) throw Error("bench: need at least 2 warmup runs");
  if (repeats < 5) throw Error("bench: need at least 5 timed runs");
  if (batch == 0 || kernel == 0 || kernel % 2 == 0) throw Error("bench: batch >= 1 and an odd kernel required");
  for (auto c : channels) {
    if (c == 0) throw Error("bench: channel count must be positive");
  }
  for (auto s : input_sizes) {
    if (s < kernel) throw Error("bench: input size " + std::to_string(s) + " smaller than kernel");
  }
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error("median of empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

bool BenchReport::fused_always_faster() const {
  return std::all_of(rows.begin(), rows.end(), [](const BenchRow& r) { return r.fused_ms < r.unfused_ms; });
}

bool BenchReport::ratio_nondecreasing() const {
  std::map<std::size_t, std::vector<const BenchRow*>> by_channels;
  for (const auto& r : rows) by_channels[r.channels].push_back(&r);
  for (auto& [c, list] : by_channels) {
    std::sort(list.begin(), list.end(), [](auto* a, auto* b) { return a->input_size < b->input_size; });
    for (std::size_t i = 1; i < list.size(); ++i) {
      if (list[i]->reduced_ratio() < list[i - 1]->reduced_ratio()) return false;
    }
  }
  return true;
}

std::string BenchReport::to_text() const {
  std::ostringstream os;
  os << "# channels size bank fused_ms unfused_ms reduced_pct\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu %zu %zu %.4f %.4f %.2f\n", r.channels, r.input_size, r.bank_size, r.fused_ms,
                  r.unfused_ms, 100.0 * r.reduced_ratio());
    os << buf;
  }
  return os.str();
}

namespace {

template <typename F>
double time_median_ms(F&& fn, std::size_t warmup, std::size_t repeats) {
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  ms.reserve(repeats);
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return median(std::move(ms));
}

}  // namespace

BenchReport run_bench(const BenchConfig& config) {
  config.validate();
  BenchReport report;
  report.config = config;
  Rng rng(config.seed);
  for (auto c : config.channels) {
    const ConvGeometry geom{c, c, config.kernel, 1, config.kernel / 2, 1};
    const auto layer = DynamicConvLayer<float>::random(geom, config.bank_size, false, rng);
    Coefficients<float> coeffs{uniform_tensor<float>({config.batch, c * config.bank_size}, 0.01f, 0.99f, rng)};
    for (auto s : config.input_sizes) {
      const auto x = uniform_tensor<float>({config.batch, c, s, s}, -1.0f, 1.0f, rng);
      volatile float sink = 0;
      BenchRow row;
      row.channels = c;
      row.input_size = s;
      row.bank_size = config.bank_size;
      row.fused_ms = time_median_ms([&] { sink = sink + forward_infer(layer, coeffs, x)[0]; }, config.warmup,
                                    config.repeats);
      row.unfused_ms = time_median_ms([&] { sink = sink + forward_train(layer, coeffs, x)[0]; }, config.warmup,
                                      config.repeats);
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace dynet
