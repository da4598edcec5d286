#include "perdpm/distributions.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace perdpm {

void require_positive_sigma(const Tensor& sigma, const char* where) {
  for (double s : sigma.data) {
    if (!(s >= kMinSigma)) {
      throw std::invalid_argument(std::string(where) +
                                  ": sigma must be positive (>= 1e-150), got " +
                                  std::to_string(s));
    }
  }
}

Var gaussian_sample(Var mu, Var sigma, Rng& rng) {
  if (!mu.value().same_shape(sigma.value())) {
    throw std::invalid_argument("gaussian_sample: mu shape " + shape_str(mu.shape()) +
                                " != sigma shape " + shape_str(sigma.shape()));
  }
  require_positive_sigma(sigma.value(), "gaussian_sample");
  Var eps = mu.tape->constant(rng.normal_tensor(mu.shape()));
  return add(mu, mul(sigma, eps));
}

Var kl_diag_gaussian_elements(Var mu_q, Var sigma_q, Var mu_p, Var sigma_p) {
  require_positive_sigma(sigma_q.value(), "kl_diag_gaussian");
  require_positive_sigma(sigma_p.value(), "kl_diag_gaussian");
  // log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2
  Var num = add(square(sigma_q), square(sub(mu_q, mu_p)));
  Var den = scale(square(sigma_p), 2.0);
  return add_scalar(add(sub(log(sigma_p), log(sigma_q)), div(num, den)), -0.5);
}

Var kl_diag_gaussian(Var mu_q, Var sigma_q, Var mu_p, Var sigma_p) {
  return sum(kl_diag_gaussian_elements(mu_q, sigma_q, mu_p, sigma_p));
}

Var gaussian_nll_elements(Var x, Var mu, Var sigma) {
  require_positive_sigma(sigma.value(), "gaussian_nll");
  constexpr double half_log_2pi = 0.91893853320467274178;  // ln(2*pi)/2
  Var quad = div(square(sub(x, mu)), scale(square(sigma), 2.0));
  return add_scalar(add(log(sigma), quad), half_log_2pi);
}

Var gaussian_nll(Var x, Var mu, Var sigma) { return sum(gaussian_nll_elements(x, mu, sigma)); }

Var gaussian_nll_masked(Var x, Var mu, Var sigma, Var mask) {
  return sum(mul(row_sum(gaussian_nll_elements(x, mu, sigma)), mask));
}

Var bernoulli_ce_elements(Var x, Var p) {
  for (double v : x.value().data) {
    if (v != 0.0 && v != 1.0) {
      throw std::invalid_argument("bernoulli_ce: observations must be 0 or 1, got " +
                                  std::to_string(v));
    }
  }
  Var one_minus_x = add_scalar(scale(x, -1.0), 1.0);
  Var one_minus_p = add_scalar(scale(p, -1.0), 1.0);
  return scale(add(mul(x, log(p)), mul(one_minus_x, log(one_minus_p))), -1.0);
}

Var bernoulli_ce(Var x, Var p) { return sum(bernoulli_ce_elements(x, p)); }

GaussianPair gaussian_fusion(Var mu1, Var sigma1, Var mu2, Var sigma2) {
  Var prec1 = div(mu1.tape->constant(Tensor::full(mu1.shape(), 1.0)), square(sigma1));
  Var prec2 = div(mu2.tape->constant(Tensor::full(mu2.shape(), 1.0)), square(sigma2));
  Var var = div(mu1.tape->constant(Tensor::full(mu1.shape(), 1.0)), add(prec1, prec2));
  Var mu = mul(var, add(mul(mu1, prec1), mul(mu2, prec2)));
  return {mu, sqrt(var)};
}

}  // namespace perdpm
