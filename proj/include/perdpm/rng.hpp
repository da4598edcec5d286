#pragma once

#include <cstdint>
#include <random>

#include "perdpm/tensor.hpp"

namespace perdpm {

// Seeded generator with a fixed bit-level mapping from engine output to
// doubles, so identical seed + identical call sequence gives an identical
// stream independent of the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Box-Muller; consumes two uniforms per draw.
  double normal();
  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Uniform integer in {0, ..., n-1}.
  std::uint64_t uniform_index(std::uint64_t n);

  // Categorical draw from probabilities summing to ~1.
  std::size_t categorical(const std::vector<double>& probs);

  Tensor normal_tensor(Shape s, double mu = 0.0, double sigma = 1.0);
  Tensor uniform_tensor(Shape s, double a, double b);

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace perdpm
