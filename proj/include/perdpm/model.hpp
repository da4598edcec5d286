#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "perdpm/dataset.hpp"
#include "perdpm/distributions.hpp"
#include "perdpm/rng.hpp"
#include "perdpm/tape.hpp"

namespace perdpm {

struct ModelDims {
  std::size_t d_x = 0;
  std::size_t d_u = 0;
  std::size_t d_g = 0;
  std::size_t d_z = 5;
  std::size_t k = 5;
  std::size_t gru_hidden = 64;
  std::size_t mlp_hidden = 32;
};

enum class EmissionMode { Gaussian, Bernoulli };

// A minibatch view: dense copies of the selected rows.
struct Batch {
  Tensor x;  // [B,T,d_x]
  Tensor u;  // [B,T,d_u]
  Tensor g;  // [B,d_g]
  std::vector<std::size_t> lengths;

  static Batch from(const CohortDataset& ds, const std::vector<std::size_t>& rows);

  std::size_t b() const { return x.shape.at(0); }
  std::size_t t() const { return x.shape.at(1); }
  Tensor at_t(const Tensor& t3, std::size_t step) const;  // [B,d] slice
  Tensor mask_at(std::size_t step) const;                 // [B], 1 while step < T_i
};

class Model;

// Parameters leafed onto a tape for one forward/backward pass.
struct Bound {
  Tape* tape = nullptr;
  const Model* model = nullptr;
  std::vector<Var> vars;  // aligned with the model's parameter order

  Var operator[](std::string_view name) const;
};

struct InferStep {
  Var h;
  Var mu;
  Var sigma;
};

struct Emission {
  Var mu;     // Gaussian mode
  Var sigma;  // Gaussian mode
  Var probs;  // Bernoulli mode, clamped into (0,1)
};

struct RolloutStep {
  Var mu_post, sigma_post;
  Var z;  // sampled during training, posterior mean otherwise
  Var prior_mu, prior_sigma;
  Emission emission;
};

struct Rollout {
  GaussianPair v_post;          // encoder output (unset in ablation mode)
  Var v;                        // sampled V or mu_v
  Var g_hat;                    // decoded genetics (unset in ablation mode)
  Var attention;                // softmax(V) rows, or ones in ablation mode
  std::vector<RolloutStep> steps;
};

// Joint genetics VAE + recurrent state-space model. The single-transition
// ablation drops the VAE, excludes genetics everywhere, and runs one
// transition function; the choice is fixed at construction.
class Model {
 public:
  Model() = default;
  Model(ModelDims dims, EmissionMode mode, bool single_transition_ablation,
        std::uint64_t init_seed);

  const ModelDims& dims() const { return dims_; }
  EmissionMode mode() const { return mode_; }
  bool ablation() const { return dmm_; }
  // Effective cluster count: 1 in ablation mode.
  std::size_t k() const { return dims_.k; }

  std::size_t param_count() const { return names_.size(); }
  const std::vector<std::string>& param_names() const { return names_; }
  std::size_t param_index(std::string_view name) const;
  Tensor& param(std::string_view name);
  const Tensor& param(std::string_view name) const;
  std::vector<Tensor>& params() { return values_; }
  const std::vector<Tensor>& params() const { return values_; }

  Bound bind(Tape& tape) const;

  GaussianPair encode_genetics(const Bound& b, Var g) const;
  Var decode_genetics(const Bound& b, Var v) const;
  InferStep infer_step(const Bound& b, Var x_t, Var u_t, Var g, Var h_prev, Var z_prev) const;
  GaussianPair transition_prior(const Bound& b, Var z_prev, Var u_t, Var attention) const;
  GaussianPair initial_prior(const Bound& b, Var attention) const;
  Emission emit(const Bound& b, Var z) const;

  // Full sequence pass. Draws reparameterized samples when sample_rng is
  // non-null, otherwise propagates posterior means.
  Rollout roll(const Bound& b, const Batch& batch, Rng* sample_rng) const;

  // Checkpoint: model.json manifest plus one flat f64 file per parameter.
  void save(const std::filesystem::path& dir, const nlohmann::json& training_info = {}) const;
  static Model load(const std::filesystem::path& dir);
  const nlohmann::json& training_info() const { return training_info_; }

 private:
  ModelDims dims_;
  EmissionMode mode_ = EmissionMode::Gaussian;
  bool dmm_ = false;
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
  nlohmann::json training_info_;

  void add_param(const std::string& name, Tensor t);
  void init_params(std::uint64_t seed);
  std::size_t d_in() const;  // inference-net input width
  std::size_t t_in() const;  // transition input width
};

}  // namespace perdpm
