#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace perdpm {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f64 tensor. The invariant numel(shape) == data.size()
// holds for every constructed tensor.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> d);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor full(Shape s, double v);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // 2-D accessors; rank is checked only via assert-level logic in callers.
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  double scalar_value() const;
};

}  // namespace perdpm
