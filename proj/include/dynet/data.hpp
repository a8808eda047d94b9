#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynet/random.hpp"
#include "dynet/tensor.hpp"

namespace dynet {

/// Labelled NCHW images.
struct Dataset {
  Tensor<float> images;
  std::vector<std::uint8_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  void validate() const;
};

/// Dataset file layout, all little-endian:
///   bytes 0..3   magic "DYDS"
///   bytes 4..23  u32 N, C, H, W, classes
///   then N*C*H*W f32 images (NCHW), then N u8 labels.
inline constexpr std::size_t kDatasetHeaderBytes = 24;

void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);
Dataset parse_dataset(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_dataset(const Dataset& data);

/// Ten-class 3-channel texture task. The class fixes the frequency and axis
/// (horizontal or vertical) of a grating. Phase, contrast, a per-channel gain
/// (possibly negative) with a matching background tint and additive noise are
/// drawn per image. Classes do not depend on the seed, so train and test sets drawn with
/// different seeds share classes.
struct SyntheticOptions {
  std::size_t size = 32;
  std::size_t num_classes = 10;
  double noise = 0.35;
  double tint = 0.5;
};

Dataset make_synthetic_dataset(std::size_t count, std::uint64_t seed, const SyntheticOptions& options = {});

/// Gathers samples `indices` into a batch with random shifts of up to
/// `crop_padding` pixels (zero fill) and optional horizontal flips.
struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, std::size_t crop_padding, bool flip,
                 Rng* rng);

}  // namespace dynet
