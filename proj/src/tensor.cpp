#include "perdpm/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace perdpm {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (numel(shape) != data.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " expects " +
                                std::to_string(numel(shape)) + " values, got " +
                                std::to_string(data.size()));
  }
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = v;
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

double Tensor::scalar_value() const {
  if (data.size() != 1) {
    throw std::invalid_argument("scalar_value: tensor has shape " + shape_str(shape));
  }
  return data[0];
}

}  // namespace perdpm
