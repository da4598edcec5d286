#pragma once

#include <cstdint>
#include <utility>

#include "json.hpp"
#include "perdpm/dataset.hpp"
#include "perdpm/rng.hpp"
#include "perdpm/tensor.hpp"

namespace perdpm {

// Knobs for the synthetic cohort. Cluster count and state dimension default
// to five each; the state dimension doubles as the number of discrete
// disease states when labeling trajectories.
struct GenConfig {
  std::size_t n = 750;
  std::size_t t = 10;
  std::size_t k = 5;
  std::size_t d_g = 10;
  std::size_t d_x = 3;
  std::size_t d_z = 5;
  std::size_t d_u = 1;
  std::uint64_t seed = 0;
  double noise = 1.0;  // observation noise scale
  // When positive, cluster genetic means are laid out so every pair of
  // clusters differs by at least this much in every dimension.
  double mean_separation = 0.0;
  bool binary_observations = false;

  void validate() const;  // throws ConfigError naming the offending field
  static GenConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct GeneticsDraw {
  Tensor g;       // [N,d_g]
  Tensor v_true;  // [N,K] one-hot
  Tensor s_true;  // [K,d_g] cluster means
  std::vector<std::size_t> cluster;  // [N]
};

GeneticsDraw gen_genetics(const GenConfig& cfg, Rng& rng);

// Binary treatment sequences: one contiguous block of ones per sample,
// shared across channels.
Tensor gen_treatments(const GenConfig& cfg, Rng& rng);

// Orders a (start, end) index pair into a half-open window.
std::pair<std::size_t, std::size_t> treatment_window(std::size_t a, std::size_t b);

// Per-cluster transition maps z_t = softmax(W2 tanh(W1 [z,u] + b1) + b2),
// drawn once per dataset.
struct TransitionMaps {
  std::vector<Tensor> w1, b1, w2, b2;
};
TransitionMaps draw_transition_maps(const GenConfig& cfg, Rng& rng);

// Rolls trajectories from given initial states [N,d_z].
Tensor simulate_states(const GenConfig& cfg, const TransitionMaps& maps, const Tensor& v_true,
                       const Tensor& u, const Tensor& z_init);

// Latent state trajectories [N,T,d_z]. Slot 0 holds the Gaussian initial
// state; slots 1..T-1 are post-softmax rows on the simplex.
Tensor gen_states(const GenConfig& cfg, const Tensor& v_true, const Tensor& u, Rng& rng);

// Observations [N,T,d_x] from a fixed affine emission plus isotropic noise.
Tensor gen_observations(const GenConfig& cfg, const Tensor& z_true, Rng& rng);

// Full pipeline, a pure function of (config, seed); includes ground truth.
CohortDataset generate_cohort(const GenConfig& cfg);

// 1-based argmax labels along the last axis of [N,T,d_z].
Tensor argmax_labels(const Tensor& z);

}  // namespace perdpm
