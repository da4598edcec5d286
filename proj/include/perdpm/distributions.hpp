#pragma once

#include "perdpm/rng.hpp"
#include "perdpm/tape.hpp"

namespace perdpm {

// Smallest standard deviation accepted anywhere: below this, sigma^2
// underflows to zero and downstream divisions blow up.
inline constexpr double kMinSigma = 1e-150;

// Positivity floor applied to every network-emitted standard deviation.
inline constexpr double kSigmaFloor = 1e-6;

// Probability clamp for Bernoulli heads.
inline constexpr double kProbEps = 1e-7;

// softplus(raw) + floor; the standard sigma head.
inline Var sigma_head(Var raw) { return add_scalar(softplus(raw), kSigmaFloor); }

void require_positive_sigma(const Tensor& sigma, const char* where);

// Reparameterized draw mu + sigma .* eps, eps ~ N(0,1); differentiable in
// mu and sigma.
Var gaussian_sample(Var mu, Var sigma, Rng& rng);

// Per-element KL( N(mu_q, sigma_q) || N(mu_p, sigma_p) ) for diagonal
// Gaussians; same shape as the inputs.
Var kl_diag_gaussian_elements(Var mu_q, Var sigma_q, Var mu_p, Var sigma_p);

// Sum over all elements.
Var kl_diag_gaussian(Var mu_q, Var sigma_q, Var mu_p, Var sigma_p);

// Per-element Gaussian negative log-likelihood of fixed data x.
Var gaussian_nll_elements(Var x, Var mu, Var sigma);
Var gaussian_nll(Var x, Var mu, Var sigma);
// Row-masked variant: x is [n,d], mask is [n]; masked rows contribute 0.
Var gaussian_nll_masked(Var x, Var mu, Var sigma, Var mask);

// Per-element Bernoulli cross-entropy; x must be 0/1, p already clamped
// inside (0,1).
Var bernoulli_ce_elements(Var x, Var p);
Var bernoulli_ce(Var x, Var p);

// Precision-weighted fusion of two diagonal Gaussians:
// var = 1/(1/s1^2 + 1/s2^2), mu = var*(mu1/s1^2 + mu2/s2^2).
struct GaussianPair {
  Var mu;
  Var sigma;
};
GaussianPair gaussian_fusion(Var mu1, Var sigma1, Var mu2, Var sigma2);

}  // namespace perdpm
