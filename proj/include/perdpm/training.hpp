#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "perdpm/model.hpp"

namespace perdpm {

struct LossBreakdown {
  double mse_vae = 0.0;
  double kl_vae = 0.0;
  double nll_or_ce = 0.0;
  double kl_z = 0.0;
  double total = 0.0;
};

struct TrainConfig {
  double lr = 3e-3;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool t_scale_vae = true;          // scale VAE terms by each sample's T_i
  std::size_t kl_warmup_epochs = 6;  // linear KL ramp; 0 disables
  double grad_clip = 10.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t gru_hidden = 64;
  std::size_t mlp_hidden = 32;
  double test_frac = 0.2;  // held-out fraction used by the CLI split

  void validate() const;
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Tape-level ELBO terms; values() gives the plain breakdown.
struct ElboVars {
  Var mse_vae;  // unset in ablation mode
  Var kl_vae;   // unset in ablation mode
  Var nll;
  Var kl_z;
  Var total;
  Rollout rollout;

  LossBreakdown values(bool ablation) const;
};

// Single-sample reparameterized ELBO over one minibatch. kl_scale multiplies
// both KL terms (warm-up); sampling is on whenever rng is non-null.
ElboVars build_elbo(const Model& model, const Bound& bound, const Batch& batch, Rng* rng,
                    double kl_scale = 1.0, bool t_scale_vae = true);

// Convenience wrapper that binds a fresh tape, builds the ELBO and returns
// the breakdown (no backward pass).
LossBreakdown elbo_loss(const Model& model, const Batch& batch, Rng& rng, double kl_scale = 1.0,
                        bool t_scale_vae = true);

// First/second-moment adaptive update with bias correction.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

double global_grad_norm(const std::vector<Tensor>& grads);
// Scales gradients so their global norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(std::vector<Tensor>& grads, double max_norm);
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg);

struct FitResult {
  std::vector<LossBreakdown> history;  // per-epoch means over samples
  std::size_t best_epoch = 0;          // index into history
  double best_total = 0.0;
};

// Minibatch training; deterministic given cfg.seed. The model ends up with
// the best-epoch parameters.
FitResult fit(Model& model, const CohortDataset& train, const TrainConfig& cfg);

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<LossBreakdown>& history, std::size_t first_epoch = 0);
std::vector<LossBreakdown> read_history_csv(const std::filesystem::path& path);

// Deterministic train/test split of {0..n-1}: returns (train_rows, test_rows).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_rows(std::size_t n,
                                                                         double test_frac,
                                                                         std::uint64_t seed);

}  // namespace perdpm
