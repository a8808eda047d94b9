#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynet/arch.hpp"
#include "dynet/tensor.hpp"

namespace dynet {

/// One named tensor inside a model file payload.
struct TensorEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

/// Text header followed by a little-endian binary payload:
///
///   DYNET-MODEL 1
///   dtype f32|f64
///   spec-lines K          followed by K lines of network spec text
///   tensors M             followed by M lines `tensor name rank dims... offset nbytes`
///   checksum <16 hex>     FNV-1a 64 of the payload
///   payload-bytes P
///   end
///   <P payload bytes>
///
/// Tensors are resolved by name, so header order is free on load.
struct ModelFile {
  static constexpr int kVersion = 1;

  DType dtype = DType::F32;
  std::string spec_text;
  std::vector<TensorEntry> entries;
  std::vector<std::uint8_t> payload;

  /// Appends `t` (converted to `dtype`) at the end of the payload.
  template <typename T>
  void add(const std::string& name, const Tensor<T>& t);

  const TensorEntry* find(const std::string& name) const;
  /// Throws naming the tensor when absent.
  template <typename T>
  Tensor<T> tensor(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_model_file(const ModelFile& file);
/// Malformed input raises an error citing the byte offset of the problem.
ModelFile parse_model_file(const std::vector<std::uint8_t>& bytes);
void write_model_file(const std::string& path, const ModelFile& file);
ModelFile read_model_file(const std::string& path);

/// All persistent tensors of `net` under their state names.
template <typename T>
ModelFile model_to_file(Network<T>& net);

/// Rebuilds the network from the embedded spec and fills every tensor;
/// missing, extra or mis-shaped tensors raise an error naming the tensor.
template <typename T>
Network<T> model_from_file(const ModelFile& file);

/// Eval-mode pass over a single image [1, C, H, W]; for every dynamic layer
/// stores the fused kernel as `blocks.<i>.<layer>.fused` and each block's
/// coefficient row as `blocks.<i>.coefficients`.
template <typename T>
ModelFile export_fused_kernels(Network<T>& net, const Tensor<T>& image);

template <typename T>
void save_model(const std::string& path, Network<T>& net);

template <typename T>
Network<T> load_model(const std::string& path);

}  // namespace dynet
