#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ldct/errors.hpp"

namespace ldct {

/// Extents of a rank-4 tensor: (batch, channel, height, width).
using Shape4 = std::array<std::size_t, 4>;

inline std::size_t shape_volume(const Shape4& s) {
  return s[0] * s[1] * s[2] * s[3];
}

inline std::string shape_to_string(const Shape4& s) {
  return "(" + std::to_string(s[0]) + ", " + std::to_string(s[1]) + ", " +
         std::to_string(s[2]) + ", " + std::to_string(s[3]) + ")";
}

/// Dense rank-4 array in row-major order, width innermost.
///
/// The float instantiation is the compute currency of every layer; the
/// double instantiation backs the 64-bit gradient-check path.
template <typename T>
class Tensor {
 public:
  Tensor() : shape_{0, 0, 0, 0} {}

  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T{0})
      : shape_{n, c, h, w}, data_(n * c * h * w, fill) {}

  explicit Tensor(const Shape4& s, T fill = T{0})
      : shape_(s), data_(shape_volume(s), fill) {}

  /// Adopts externally produced values. Rejects length mismatches and
  /// non-finite entries; internal layer results skip this validation.
  static Tensor from_external(const Shape4& s, std::vector<T> values) {
    if (values.size() != shape_volume(s)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_to_string(s));
    }
    for (const T v : values) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw NumericError("non-finite value in external tensor data");
      }
    }
    Tensor t;
    t.shape_ = s;
    t.data_ = std::move(values);
    return t;
  }

  const Shape4& shape() const { return shape_; }
  std::size_t batch() const { return shape_[0]; }
  std::size_t channels() const { return shape_[1]; }
  std::size_t height() const { return shape_[2]; }
  std::size_t width() const { return shape_[3]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  /// Pointer to the contiguous height*width plane (n, c).
  T* plane(std::size_t n, std::size_t c) {
    return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  /// Same data, new extents; total element count must be preserved.
  Tensor reshaped(const Shape4& s) const {
    if (shape_volume(s) != data_.size()) {
      throw ShapeError("reshape volume mismatch: " + shape_to_string(shape_) +
                       " -> " + shape_to_string(s));
    }
    Tensor t;
    t.shape_ = s;
    t.data_ = data_;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      t[i] = static_cast<U>(data_[i]);
    }
    return t;
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  template <typename U>
  friend class Tensor;

  Shape4 shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// A trainable value with its gradient accumulator.
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  std::string name;
  /// Whether the L2 weight penalty applies (true for conv/linear weights,
  /// false for biases and batch-norm scale/shift).
  bool penalized = true;

  Parameter() = default;
  Parameter(Tensor<T> v, std::string n, bool pen = true)
      : value(std::move(v)), grad(value.shape()), name(std::move(n)), penalized(pen) {}

  void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

template <typename T>
Tensor<T> subtract(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "subtract");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> scaled(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

}  // namespace ldct
