#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cmsr/error.hpp"

namespace cmsr {

// Dense channels-first array. Rank 3 is [C, H, W]; rank 4 is either a batch
// [N, C, H, W] or a kernel bank [O, I, k, k]. Rank 1 is used for biases in
// serialized form only.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(element_count(shape_), fill);
  }

  BasicTensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != element_count(shape_)) {
      throw InvalidArgument("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape product " +
                            std::to_string(element_count(shape_)));
    }
  }

  static BasicTensor plane(int height, int width, T fill = T(0)) {
    return BasicTensor({1, height, width}, fill);
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Trailing three dimensions; valid for rank 3 tensors.
  int channels() const { return shape_[shape_.size() - 3]; }
  int height() const { return shape_[shape_.size() - 2]; }
  int width() const { return shape_[shape_.size() - 1]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(int c, int y, int x) noexcept { return data_[offset3(c, y, x)]; }
  const T& operator()(int c, int y, int x) const noexcept { return data_[offset3(c, y, x)]; }

  T& operator()(int o, int i, int y, int x) noexcept { return data_[offset4(o, i, y, x)]; }
  const T& operator()(int o, int i, int y, int x) const noexcept {
    return data_[offset4(o, i, y, x)];
  }

  // Pointer to row `y` of channel `c` (rank 3).
  T* row(int c, int y) noexcept { return data_.data() + offset3(c, y, 0); }
  const T* row(int c, int y) const noexcept { return data_.data() + offset3(c, y, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_shape(const BasicTensor& other) const noexcept { return shape_ == other.shape_; }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t element_count(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
  }

  void validate_shape() const {
    if (shape_.empty() || shape_.size() > 4) {
      throw InvalidArgument("tensor rank must be 1..4");
    }
    for (int d : shape_) {
      if (d <= 0) throw InvalidArgument("tensor dimensions must be positive");
    }
  }

  std::size_t offset3(int c, int y, int x) const noexcept {
    const std::size_t h = static_cast<std::size_t>(shape_[shape_.size() - 2]);
    const std::size_t w = static_cast<std::size_t>(shape_[shape_.size() - 1]);
    return (static_cast<std::size_t>(c) * h + static_cast<std::size_t>(y)) * w +
           static_cast<std::size_t>(x);
  }

  std::size_t offset4(int o, int i, int y, int x) const noexcept {
    const auto d1 = static_cast<std::size_t>(shape_[1]);
    const auto d2 = static_cast<std::size_t>(shape_[2]);
    const auto d3 = static_cast<std::size_t>(shape_[3]);
    return ((static_cast<std::size_t>(o) * d1 + static_cast<std::size_t>(i)) * d2 +
            static_cast<std::size_t>(y)) *
               d3 +
           static_cast<std::size_t>(x);
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Single-channel [1, H, W] luminance or boundary plane with values in [0, 1].
using ImagePlane = Tensor;

}  // namespace cmsr
