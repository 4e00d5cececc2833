#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "segcls/error.hpp"

namespace segcls {

using Dims = std::vector<std::size_t>;

inline std::size_t element_count(const Dims& d) {
  return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_string(const Dims& d) {
  std::string out = "[";
  for (std::size_t i = 0; i < d.size(); ++i) out += (i ? "," : "") + std::to_string(d[i]);
  return out + "]";
}

/// Dense row-major tensor with an optional gradient buffer of the same size.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Dims shape, T fill = T(0)) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Tensor(Dims shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw UsageError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       dims_string(shape_));
    }
  }

  const Dims& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  bool has_grad() const { return !grad_.empty(); }
  /// Gradient buffer, allocated (zeroed) on first use.
  std::span<T> grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
    return grad_;
  }
  std::span<const T> grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Dims shape) const {
    if (element_count(shape) != size())
      throw UsageError("cannot reshape " + dims_string(shape_) + " to " + dims_string(shape));
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  Dims shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

template <typename T>
void require_shape(const Tensor<T>& t, const Dims& expected, const char* what) {
  if (t.shape() != expected) {
    throw UsageError(std::string(what) + ": expected shape " + dims_string(expected) + ", got " +
                     dims_string(t.shape()));
  }
}

}  // namespace segcls
