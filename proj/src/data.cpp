#include "dynet/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "binary.hpp"

namespace dynet {

void Dataset::validate() const {
  if (images.rank() != 4) throw Error("dataset: images must be NCHW, got " + shape_str(images.shape()));
  if (images.dim(0) != labels.size()) {
    throw Error("dataset: " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                " labels");
  }
  if (num_classes == 0 || num_classes > 256) throw Error("dataset: class count must be in [1, 256]");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw Error("dataset: label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                  " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& data) {
  data.validate();
  std::vector<std::uint8_t> out{'D', 'Y', 'D', 'S'};
  for (std::size_t d = 0; d < 4; ++d) detail::put_u32(out, static_cast<std::uint32_t>(data.images.dim(d)));
  detail::put_u32(out, static_cast<std::uint32_t>(data.num_classes));
  detail::put_values(out, data.images.data().data(), data.images.numel());
  out.insert(out.end(), data.labels.begin(), data.labels.end());
  return out;
}

Dataset parse_dataset(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kDatasetHeaderBytes) {
    throw Error("dataset file: header truncated at byte " + std::to_string(bytes.size()) + " (need " +
                std::to_string(kDatasetHeaderBytes) + ")");
  }
  if (std::memcmp(bytes.data(), "DYDS", 4) != 0) throw Error("dataset file: bad magic at byte 0");
  std::uint32_t dims[5];
  for (int i = 0; i < 5; ++i) {
    dims[i] = detail::get_u32(bytes.data() + 4 + 4 * i);
    if (dims[i] == 0) throw Error("dataset file: zero header field at byte " + std::to_string(4 + 4 * i));
  }
  const std::uint64_t n = dims[0];
  const std::uint64_t elems = n * dims[1] * dims[2] * dims[3];
  const std::uint64_t expected = kDatasetHeaderBytes + elems * 4 + n;
  if (bytes.size() != expected) {
    throw Error("dataset file: size mismatch, expected " + std::to_string(expected) + " bytes, got " +
                std::to_string(bytes.size()));
  }
  Dataset d;
  d.num_classes = dims[4];
  d.images = Tensor<float>({dims[0], dims[1], dims[2], dims[3]});
  std::memcpy(d.images.data().data(), bytes.data() + kDatasetHeaderBytes, elems * 4);
  const std::uint8_t* lp = bytes.data() + kDatasetHeaderBytes + elems * 4;
  d.labels.assign(lp, lp + n);
  for (std::size_t i = 0; i < n; ++i) {
    if (d.labels[i] >= d.num_classes) {
      throw Error("dataset file: label " + std::to_string(d.labels[i]) + " at byte " +
                  std::to_string(kDatasetHeaderBytes + elems * 4 + i) + " exceeds class count " +
                  std::to_string(d.num_classes));
    }
  }
  return d;
}

void save_dataset(const std::string& path, const Dataset& data) { detail::write_file(path, serialize_dataset(data)); }

Dataset load_dataset(const std::string& path) { return parse_dataset(detail::read_file(path)); }

Dataset make_synthetic_dataset(std::size_t count, std::uint64_t seed, const SyntheticOptions& options) {
  if (count == 0 || options.size < 8 || options.num_classes == 0 || options.num_classes > 256) {
    throw Error("make_synthetic_dataset: need count >= 1, size >= 8, 1 <= classes <= 256");
  }
  const std::size_t s = options.size, k = options.num_classes;
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Dataset d;
  d.num_classes = k;
  d.images = Tensor<float>({count, 3, s, s});
  d.labels.resize(count);
  auto img = d.images.data();
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t label = static_cast<std::size_t>(unit(rng) * static_cast<double>(k)) % k;
    d.labels[n] = static_cast<std::uint8_t>(label);
    // class -> (frequency, axis); both axes are unchanged by a horizontal flip
    const double cycles = 2.0 + static_cast<double>(label / 2);
    const bool vertical = label % 2 == 1;
    const double phase = unit(rng) * two_pi;
    const double contrast = 0.4 + 0.8 * unit(rng);
    double gain[3];
    double norm = 0;
    for (double& g : gain) {
      g = 2.0 * unit(rng) - 1.0;
      norm += g * g;
    }
    norm = std::sqrt(std::max(norm, 1e-6));
    for (double& g : gain) g /= norm;
    for (std::size_t c = 0; c < 3; ++c) {
      const double bg = options.tint * gain[c];
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
          const double t = static_cast<double>(vertical ? x : y) / static_cast<double>(s);
          const double v = contrast * gain[c] * std::sin(two_pi * cycles * t + phase) + bg +
                           options.noise * gauss(rng);
          img[((n * 3 + c) * s + y) * s + x] = static_cast<float>(v);
        }
      }
    }
  }
  return d;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, std::size_t crop_padding, bool flip,
                 Rng* rng) {
  if (indices.empty()) throw Error("make_batch: empty index list");
  if ((crop_padding || flip) && !rng) throw Error("make_batch: augmentation needs an rng");
  const std::size_t c = data.channels(), h = data.height(), w = data.width();
  Batch b;
  b.images = Tensor<float>({indices.size(), c, h, w});
  b.labels.reserve(indices.size());
  auto out = b.images.data();
  const auto src = data.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t n = indices[i];
    if (n >= data.size()) throw Error("make_batch: index " + std::to_string(n) + " out of range");
    b.labels.push_back(data.labels[n]);
    long dy = 0, dx = 0;
    bool mirror = false;
    if (crop_padding) {
      std::uniform_int_distribution<long> shift(-static_cast<long>(crop_padding), static_cast<long>(crop_padding));
      dy = shift(*rng);
      dx = shift(*rng);
    }
    if (flip) mirror = std::uniform_int_distribution<int>(0, 1)(*rng) == 1;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* plane = src.data() + (n * c + ch) * h * w;
      float* dst = out.data() + (i * c + ch) * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        const long sy = static_cast<long>(y) + dy;
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t xx = mirror ? w - 1 - x : x;
          const long sx = static_cast<long>(xx) + dx;
          const bool inside = sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w);
          dst[y * w + x] = inside ? plane[sy * static_cast<long>(w) + sx] : 0.0f;
        }
      }
    }
  }
  return b;
}

}  // namespace dynet
