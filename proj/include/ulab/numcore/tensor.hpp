#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ulab/error.hpp"

namespace ulab::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major tensor. float is the working precision; double is used by
/// the gradient-verification builds.
template <std::floating_point T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0}) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    require(shape_size(shape) == data.size(),
            "tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t rows() const { return rank() == 0 ? 1 : shape[0]; }
  std::size_t cols() const { return rank() < 2 ? 1 : size() / shape[0]; }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  T item() const {
    require(size() == 1, "item() on non-scalar tensor " + shape_str(shape));
    return data[0];
  }

  template <std::floating_point U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool operator==(const Tensor&) const = default;
};

}  // namespace ulab::num
