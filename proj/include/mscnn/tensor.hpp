#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mscnn {

/// Raised for contract violations: shape mismatches, malformed files, bad configs.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr std::size_t sample() const { return c * h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Rank-4 dense array in N, C, H, W row-major order.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  BasicTensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : BasicTensor(Shape{n, c, h, w}, fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw Error("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                  to_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[offset(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  /// Pointer to the start of one (sample, channel) plane.
  T* plane(std::size_t n, std::size_t c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(std::size_t n, std::size_t c) const { return data_.data() + offset(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Copy of sample `n` as a batch-of-one tensor.
  BasicTensor sample(std::size_t n) const {
    BasicTensor out(Shape{1, shape_.c, shape_.h, shape_.w});
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(n * shape_.sample()), shape_.sample(),
                out.data_.begin());
    return out;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

inline std::string to_string(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w);
}

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what) {
  if (!t.all_finite()) throw Error(std::string(what) + ": non-finite value in result");
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw Error(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                to_string(b.shape()));
}

/// Sum of squares accumulated in double.
template <typename T>
double squared_norm(std::span<const T> v) {
  double s = 0.0;
  for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return s;
}

}  // namespace mscnn
