#include "perdpm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "perdpm/errors.hpp"

namespace perdpm {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("train config: lr must be >= 0");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (!(grad_clip > 0.0)) throw ConfigError("train config: grad_clip must be > 0");
  if (!(test_frac >= 0.0 && test_frac < 1.0))
    throw ConfigError("train config: test_frac must be in [0,1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train config: beta1/beta2 must be in [0,1)");
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig cfg;
  auto get = [&](const char* name, auto& slot) {
    if (j.contains(name)) {
      try {
        slot = j.at(name).get<std::decay_t<decltype(slot)>>();
      } catch (const json::exception&) {
        throw ConfigError(std::string("train config field '") + name + "' has the wrong type");
      }
    }
  };
  get("lr", cfg.lr);
  get("epochs", cfg.epochs);
  get("batch_size", cfg.batch_size);
  get("seed", cfg.seed);
  get("t_scale_vae", cfg.t_scale_vae);
  if (j.contains("kl_warmup_epochs")) {
    get("kl_warmup_epochs", cfg.kl_warmup_epochs);
  } else {
    cfg.kl_warmup_epochs = cfg.epochs / 10;  // ramp over the first 10%
  }
  get("grad_clip", cfg.grad_clip);
  get("beta1", cfg.beta1);
  get("beta2", cfg.beta2);
  get("eps", cfg.eps);
  get("gru_hidden", cfg.gru_hidden);
  get("mlp_hidden", cfg.mlp_hidden);
  get("test_frac", cfg.test_frac);
  cfg.validate();
  return cfg;
}

json TrainConfig::to_json() const {
  return json{{"lr", lr},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"seed", seed},
              {"t_scale_vae", t_scale_vae},
              {"kl_warmup_epochs", kl_warmup_epochs},
              {"grad_clip", grad_clip},
              {"beta1", beta1},
              {"beta2", beta2},
              {"eps", eps},
              {"gru_hidden", gru_hidden},
              {"mlp_hidden", mlp_hidden},
              {"test_frac", test_frac}};
}

LossBreakdown ElboVars::values(bool ablation) const {
  LossBreakdown out;
  out.mse_vae = ablation ? 0.0 : mse_vae.value().data[0];
  out.kl_vae = ablation ? 0.0 : kl_vae.value().data[0];
  out.nll_or_ce = nll.value().data[0];
  out.kl_z = kl_z.value().data[0];
  out.total = total.value().data[0];
  return out;
}

ElboVars build_elbo(const Model& model, const Bound& bound, const Batch& batch, Rng* rng,
                    double kl_scale, bool t_scale_vae) {
  Tape& tape = *bound.tape;
  std::size_t B = batch.b(), T = batch.t();
  ElboVars out;

  auto stage = [&](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const std::runtime_error& e) {
      throw NumericError(std::string("elbo term ") + name + ": " + e.what());
    }
  };

  out.rollout = stage("posterior rollout",
                      [&] { return model.roll(bound, batch, rng); });
  const Rollout& ro = out.rollout;

  // per-sample factor for the VAE terms: T_i when enabled, 1 otherwise
  Tensor tfac({B});
  for (std::size_t i = 0; i < B; ++i)
    tfac.data[i] = t_scale_vae ? static_cast<double>(batch.lengths[i]) : 1.0;
  Var tfac_v = tape.constant(tfac);

  if (!model.ablation()) {
    stage("MSE_VAE", [&] {
      Var g_const = tape.constant(batch.g);
      Var per_sample = row_sum(square(sub(g_const, ro.g_hat)));
      out.mse_vae = mean(mul(per_sample, tfac_v));
      return 0;
    });
    stage("KL_VAE", [&] {
      Var zero = tape.constant(Tensor(ro.v_post.mu.shape()));
      Var one = tape.constant(Tensor::full(ro.v_post.mu.shape(), 1.0));
      Var per_sample =
          row_sum(kl_diag_gaussian_elements(ro.v_post.mu, ro.v_post.sigma, zero, one));
      out.kl_vae = scale(mean(mul(per_sample, tfac_v)), kl_scale);
      return 0;
    });
  }

  stage("NLL", [&] {
    Var acc{};
    for (std::size_t t = 0; t < T; ++t) {
      Var x_t = tape.constant(batch.at_t(batch.x, t));
      Var mask = tape.constant(batch.mask_at(t));
      const Emission& em = ro.steps[t].emission;
      Var per_sample =
          model.mode() == EmissionMode::Gaussian
              ? row_sum(gaussian_nll_elements(x_t, em.mu, em.sigma))
              : row_sum(bernoulli_ce_elements(x_t, em.probs));
      Var masked = mul(per_sample, mask);
      acc = t == 0 ? masked : add(acc, masked);
    }
    out.nll = mean(acc);
    return 0;
  });

  stage("KL_z", [&] {
    Var acc{};
    for (std::size_t t = 0; t < T; ++t) {
      Var mask = tape.constant(batch.mask_at(t));
      const RolloutStep& st = ro.steps[t];
      Var per_sample = row_sum(
          kl_diag_gaussian_elements(st.mu_post, st.sigma_post, st.prior_mu, st.prior_sigma));
      Var masked = mul(per_sample, mask);
      acc = t == 0 ? masked : add(acc, masked);
    }
    out.kl_z = scale(mean(acc), kl_scale);
    return 0;
  });

  out.total = model.ablation() ? add(out.nll, out.kl_z)
                               : add(add(out.mse_vae, out.kl_vae), add(out.nll, out.kl_z));
  return out;
}

LossBreakdown elbo_loss(const Model& model, const Batch& batch, Rng& rng, double kl_scale,
                        bool t_scale_vae) {
  Tape tape;
  Bound bound = model.bind(tape);
  return build_elbo(model, bound, batch, &rng, kl_scale, t_scale_vae).values(model.ablation());
}

double global_grad_norm(const std::vector<Tensor>& grads) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double x : g.data) sq += x * x;
  return std::sqrt(sq);
}

double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  double norm = global_grad_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (Tensor& g : grads)
      for (double& x : g.data) x *= s;
  }
  return norm;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.shape);
      state.v.emplace_back(p.shape);
    }
  }
  state.step++;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      double g = grads[i].data[k];
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in adaptive step");
      double& m = state.m[i].data[k];
      double& v = state.v[i].data[k];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      double mhat = m / bc1;
      double vhat = v / bc2;
      params[i].data[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_rows(std::size_t n,
                                                                         double test_frac,
                                                                         std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ 0x5e'ed'5e'ed'5e'ed'5e'edULL);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  std::size_t n_test = static_cast<std::size_t>(std::floor(test_frac * static_cast<double>(n)));
  std::vector<std::size_t> test(order.begin(), order.begin() + n_test);
  std::vector<std::size_t> train(order.begin() + n_test, order.end());
  return {train, test};
}

FitResult fit(Model& model, const CohortDataset& train, const TrainConfig& cfg) {
  cfg.validate();
  bool binary_model = model.mode() == EmissionMode::Bernoulli;
  if (binary_model != train.binary_observations) {
    throw ConfigError("model emission mode does not match the dataset observation type");
  }
  std::size_t n = train.n();
  if (n == 0) throw ConfigError("fit: empty training set");

  Rng noise_rng(cfg.seed + 1);
  AdamState adam;
  FitResult result;
  std::vector<Tensor> best_params = model.params();
  double best_total = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double kl_scale =
        cfg.kl_warmup_epochs == 0
            ? 1.0
            : std::min(1.0, static_cast<double>(epoch + 1) /
                                static_cast<double>(cfg.kl_warmup_epochs));
    // fixed shuffle per (seed, epoch)
    Rng shuffle_rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

    LossBreakdown epoch_mean;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::size_t stop = std::min(n, start + cfg.batch_size);
      std::vector<std::size_t> rows(order.begin() + start, order.begin() + stop);
      Batch batch = Batch::from(train, rows);

      Tape tape;
      Bound bound = model.bind(tape);
      ElboVars elbo = build_elbo(model, bound, batch, &noise_rng, kl_scale, cfg.t_scale_vae);
      LossBreakdown lb = elbo.values(model.ablation());
      if (!std::isfinite(lb.total)) throw NumericError("non-finite loss");
      if (lb.total > 1e8) {
        throw NumericError("training diverged: loss " + std::to_string(lb.total) + " at epoch " +
                           std::to_string(epoch));
      }
      tape.backward(elbo.total);

      std::vector<Tensor> grads;
      grads.reserve(bound.vars.size());
      for (Var v : bound.vars) grads.push_back(tape.grad(v));
      clip_gradients(grads, cfg.grad_clip);
      adam_step(model.params(), grads, adam, cfg);

      double w = static_cast<double>(rows.size());
      epoch_mean.mse_vae += lb.mse_vae * w;
      epoch_mean.kl_vae += lb.kl_vae * w;
      epoch_mean.nll_or_ce += lb.nll_or_ce * w;
      epoch_mean.kl_z += lb.kl_z * w;
      epoch_mean.total += lb.total * w;
    }
    double inv = 1.0 / static_cast<double>(n);
    epoch_mean.mse_vae *= inv;
    epoch_mean.kl_vae *= inv;
    epoch_mean.nll_or_ce *= inv;
    epoch_mean.kl_z *= inv;
    epoch_mean.total *= inv;
    result.history.push_back(epoch_mean);

    if (epoch_mean.total < best_total) {
      best_total = epoch_mean.total;
      best_epoch = epoch;
      best_params = model.params();
    }
  }

  model.params() = std::move(best_params);
  result.best_epoch = best_epoch;
  result.best_total = best_total;
  return result;
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<LossBreakdown>& history, std::size_t first_epoch) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,mse_vae,kl_vae,nll,kl_z,total\n";
  char line[256];
  for (std::size_t i = 0; i < history.size(); ++i) {
    const LossBreakdown& h = history[i];
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", first_epoch + i,
                  h.mse_vae, h.kl_vae, h.nll_or_ce, h.kl_z, h.total);
    out << line;
  }
}

std::vector<LossBreakdown> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string header;
  std::getline(in, header);
  std::vector<LossBreakdown> out;
  std::size_t epoch;
  LossBreakdown h;
  char comma;
  while (in >> epoch >> comma >> h.mse_vae >> comma >> h.kl_vae >> comma >> h.nll_or_ce >>
         comma >> h.kl_z >> comma >> h.total) {
    out.push_back(h);
  }
  return out;
}

}  // namespace perdpm
