#include "dynet/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace dynet {

double pearson(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error("pearson: length mismatch " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  if (u.size() < 2) throw Error("pearson: need at least two samples");
  const double n = static_cast<double>(u.size());
  double mu = 0, mv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    mu += u[i];
    mv += v[i];
  }
  mu /= n;
  mv /= n;
  double suv = 0, suu = 0, svv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i] - mu, b = v[i] - mv;
    suv += a * b;
    suu += a * a;
    svv += b * b;
  }
  if (suu == 0.0 || svv == 0.0) throw Error("pearson: zero-variance input (degenerate feature map)");
  return std::clamp(suv / std::sqrt(suu * svv), -1.0, 1.0);
}

std::string CorrelationHistogram::to_text() const {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "bands %.3f %.3f %.3f\n", bands.weak, bands.middle, bands.strong);
  os << buf;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    std::snprintf(buf, sizeof buf, "bin %+.3f %+.3f %zu\n", edges[b], edges[b + 1], counts[b]);
    os << buf;
  }
  os << "tally " << none << ' ' << weak << ' ' << middle << ' ' << strong << '\n';
  os << "pairs " << pairs << ' ' << skipped_pairs << '\n';
  return os.str();
}

template <typename T>
CorrelationHistogram correlation_histogram(const Tensor<T>& features, std::size_t bins, CorrelationBands bands) {
  if (features.rank() != 4) throw Error("correlation_histogram: expected NCHW, got " + shape_str(features.shape()));
  const std::size_t n = features.dim(0), c = features.dim(1), plane = features.dim(2) * features.dim(3);
  if (c < 2) throw Error("correlation_histogram: need at least two channels");
  if (bins == 0) throw Error("correlation_histogram: need at least one bin");

  std::vector<std::vector<double>> chans(c, std::vector<double>(n * plane));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = features.data().data() + (s * c + ch) * plane;
      std::copy(p, p + plane, chans[ch].begin() + s * plane);
    }
  }
  std::vector<bool> degenerate(c, false);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto [lo, hi] = std::minmax_element(chans[ch].begin(), chans[ch].end());
    degenerate[ch] = *lo == *hi;
  }

  CorrelationHistogram h;
  h.bands = bands;
  h.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(-1.0 + 2.0 * static_cast<double>(b) / bins);
  for (std::size_t ch = 0; ch < c; ++ch) h.skipped_channels += degenerate[ch] ? 1 : 0;

  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = a + 1; b < c; ++b) {
      if (degenerate[a] || degenerate[b]) {
        ++h.skipped_pairs;
        continue;
      }
      const double r = pearson(chans[a], chans[b]);
      const auto bin = std::min<std::size_t>(bins - 1, static_cast<std::size_t>((r + 1.0) / 2.0 * bins));
      ++h.counts[bin];
      const double m = std::abs(r);
      if (m < bands.weak) {
        ++h.none;
      } else if (m < bands.middle) {
        ++h.weak;
      } else if (m < bands.strong) {
        ++h.middle;
      } else {
        ++h.strong;
      }
      ++h.pairs;
    }
  }
  return h;
}

template CorrelationHistogram correlation_histogram(const Tensor<float>&, std::size_t, CorrelationBands);
template CorrelationHistogram correlation_histogram(const Tensor<double>&, std::size_t, CorrelationBands);

}  // namespace dynet
