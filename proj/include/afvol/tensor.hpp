#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "afvol/error.hpp"

namespace afvol {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major array of doubles. A rank-0 tensor (empty shape) holds one
/// scalar.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() : data(1, 0.0) {}

  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {
    check_dims();
  }

  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    check_dims();
    if (data.size() != shape_size(shape)) {
      throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                           std::to_string(data.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }

  /// Extent along `axis`; negative axes count from the back.
  std::size_t dim(int axis) const {
    const int r = static_cast<int>(shape.size());
    const int a = axis < 0 ? r + axis : axis;
    if (a < 0 || a >= r) {
      throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    }
    return shape[static_cast<std::size_t>(a)];
  }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at(std::size_t r, std::size_t c) { return data[r * shape.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape.back() + c]; }

  double item() const {
    if (data.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape));
    return data[0];
  }

  std::span<double> values() noexcept { return data; }
  std::span<const double> values() const noexcept { return data; }

  bool operator==(const Tensor&) const = default;

 private:
  void check_dims() const {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
  }
};

}  // namespace afvol
