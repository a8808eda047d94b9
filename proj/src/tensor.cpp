#include "dynet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dynet {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* dtype_name(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& name) {
  if (name == "f32") return DType::F32;
  if (name == "f64") return DType::F64;
  throw Error("unknown dtype '" + name + "' (expected f32 or f64)");
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw Error("tensor rank must be 1..4, got " + std::to_string(shape.size()));
  }
  for (auto d : shape) {
    if (d == 0) throw Error("tensor extents must be >= 1, got " + shape_str(shape));
  }
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw Error("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_str(shape_));
  }
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t i) const {
  if (i >= shape_.size()) {
    throw Error("dimension " + std::to_string(i) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[i];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw Error("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void ConvGeometry::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || groups == 0) {
    throw Error("conv geometry fields must be positive");
  }
  if (in_channels % groups != 0) {
    throw Error("in_channels " + std::to_string(in_channels) + " not divisible by groups " +
                std::to_string(groups));
  }
  if (out_channels % groups != 0) {
    throw Error("out_channels " + std::to_string(out_channels) + " not divisible by groups " +
                std::to_string(groups));
  }
}

std::size_t ConvGeometry::out_extent(std::size_t in_extent) const {
  const std::size_t padded = in_extent + 2 * padding;
  if (padded < kernel) {
    throw Error("spatial extent " + std::to_string(in_extent) + " with padding " + std::to_string(padding) +
                " is smaller than kernel " + std::to_string(kernel));
  }
  return (padded - kernel) / stride + 1;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw Error("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace dynet
