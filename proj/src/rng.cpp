#include "perdpm/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace perdpm {

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log1p(-u1));
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  // 53-bit uniform scaled; bias is negligible for the small ranges used here.
  return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
}

std::size_t Rng::categorical(const std::vector<double>& probs) {
  double u = uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return probs.size() - 1;
}

Tensor Rng::normal_tensor(Shape s, double mu, double sigma) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = normal(mu, sigma);
  return t;
}

Tensor Rng::uniform_tensor(Shape s, double a, double b) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = uniform(a, b);
  return t;
}

}  // namespace perdpm
