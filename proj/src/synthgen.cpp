#include "perdpm/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "perdpm/errors.hpp"
#include "perdpm/tape.hpp"

namespace perdpm {

namespace {

using nlohmann::json;

// Transition-map hidden width and bias scales. Bias scale 1 keeps the
// per-cluster attractors well separated without freezing the trajectories.
constexpr double kBiasScale = 1.0;

void require_field(bool ok, const char* field, const std::string& why) {
  if (!ok) throw ConfigError(std::string("config field '") + field + "' " + why);
}

}  // namespace

void GenConfig::validate() const {
  require_field(n >= 1, "N", "must be >= 1");
  require_field(t >= 1, "T", "must be >= 1");
  require_field(k >= 1, "K", "must be >= 1");
  require_field(d_g >= 1, "d_g", "must be >= 1");
  require_field(d_x >= 1, "d_x", "must be >= 1");
  require_field(d_z >= 1, "d_z", "must be >= 1");
  require_field(d_u >= 1, "d_u", "must be >= 1");
  require_field(noise >= 0.0, "noise", "must be >= 0");
  require_field(mean_separation >= 0.0, "mean_separation", "must be >= 0");
}

GenConfig GenConfig::from_json(const json& j) {
  GenConfig cfg;
  auto get = [&](const char* name, auto& slot) {
    if (j.contains(name)) {
      try {
        slot = j.at(name).get<std::decay_t<decltype(slot)>>();
      } catch (const json::exception&) {
        throw ConfigError(std::string("config field '") + name + "' has the wrong type");
      }
    }
  };
  get("N", cfg.n);
  get("T", cfg.t);
  get("K", cfg.k);
  get("d_g", cfg.d_g);
  get("d_x", cfg.d_x);
  get("d_z", cfg.d_z);
  get("d_u", cfg.d_u);
  get("seed", cfg.seed);
  get("noise", cfg.noise);
  get("mean_separation", cfg.mean_separation);
  get("binary_observations", cfg.binary_observations);
  cfg.validate();
  return cfg;
}

json GenConfig::to_json() const {
  return json{{"N", n},         {"T", t},
              {"K", k},         {"d_g", d_g},
              {"d_x", d_x},     {"d_z", d_z},
              {"d_u", d_u},     {"seed", seed},
              {"noise", noise}, {"mean_separation", mean_separation},
              {"binary_observations", binary_observations}};
}

GeneticsDraw gen_genetics(const GenConfig& cfg, Rng& rng) {
  std::size_t K = cfg.k, dg = cfg.d_g, N = cfg.n;
  GeneticsDraw out;
  out.s_true = Tensor({K, dg});
  if (cfg.mean_separation > 0.0) {
    // Per dimension: a random offset plus a random permutation of the
    // cluster index times the separation, so every cluster pair differs by
    // at least `mean_separation` in every dimension.
    for (std::size_t j = 0; j < dg; ++j) {
      double offset = rng.uniform(-5.0, 5.0);
      std::vector<std::size_t> perm(K);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = K; i > 1; --i)
        std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
      for (std::size_t kk = 0; kk < K; ++kk)
        out.s_true.at(kk, j) = offset + static_cast<double>(perm[kk]) * cfg.mean_separation;
    }
  } else {
    for (double& v : out.s_true.data) v = rng.uniform(-5.0, 5.0);
  }

  // Per-cluster isotropic covariance u_k * I
  std::vector<double> cov(K);
  for (double& c : cov) c = rng.uniform(0.0, 1.0);

  out.v_true = Tensor({N, K});
  out.g = Tensor({N, dg});
  out.cluster.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    Tensor logits = rng.normal_tensor({K});
    Tensor probs = softmax_rows(logits);
    std::size_t c = rng.categorical(probs.data);
    out.cluster[i] = c;
    out.v_true.at(i, c) = 1.0;
    double sd = std::sqrt(cov[c]);
    for (std::size_t j = 0; j < dg; ++j)
      out.g.at(i, j) = out.s_true.at(c, j) + sd * rng.normal();
  }
  return out;
}

std::pair<std::size_t, std::size_t> treatment_window(std::size_t a, std::size_t b) {
  return a <= b ? std::make_pair(a, b) : std::make_pair(b, a);
}

Tensor gen_treatments(const GenConfig& cfg, Rng& rng) {
  Tensor u({cfg.n, cfg.t, cfg.d_u});
  for (std::size_t i = 0; i < cfg.n; ++i) {
    auto [lo, hi] = treatment_window(rng.uniform_index(cfg.t), rng.uniform_index(cfg.t));
    for (std::size_t t = lo; t < hi; ++t)
      for (std::size_t j = 0; j < cfg.d_u; ++j) u.data[(i * cfg.t + t) * cfg.d_u + j] = 1.0;
  }
  return u;
}

TransitionMaps draw_transition_maps(const GenConfig& cfg, Rng& rng) {
  std::size_t K = cfg.k, dz = cfg.d_z, du = cfg.d_u;
  std::size_t dh = 2 * dz;
  std::size_t din = dz + du;
  TransitionMaps maps;
  maps.w1.resize(K);
  maps.b1.resize(K);
  maps.w2.resize(K);
  maps.b2.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    maps.w1[k] = rng.normal_tensor({din, dh}, 0.0, 1.0 / std::sqrt(static_cast<double>(din)));
    maps.b1[k] = rng.normal_tensor({dh}, 0.0, kBiasScale);
    maps.w2[k] = rng.normal_tensor({dh, dz}, 0.0, 1.0 / std::sqrt(static_cast<double>(dh)));
    maps.b2[k] = rng.normal_tensor({dz}, 0.0, kBiasScale);
  }
  return maps;
}

Tensor simulate_states(const GenConfig& cfg, const TransitionMaps& maps, const Tensor& v_true,
                       const Tensor& u, const Tensor& z_init) {
  std::size_t N = cfg.n, T = cfg.t, K = cfg.k, dz = cfg.d_z, du = cfg.d_u;
  std::size_t dh = 2 * dz;
  std::size_t din = dz + du;

  Tensor z({N, T, dz});
  for (std::size_t i = 0; i < N; ++i)
    std::copy_n(z_init.data.begin() + i * dz, dz, z.data.begin() + (i * T) * dz);

  std::vector<double> in(din), hid(dh), head(dz);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t i = 0; i < N; ++i) {
      std::size_t c = 0;
      while (c + 1 < K && v_true.at(i, c) != 1.0) ++c;
      const double* zprev = z.data.data() + (i * T + t - 1) * dz;
      const double* uprev = u.data.data() + (i * T + t - 1) * du;
      std::copy_n(zprev, dz, in.begin());
      std::copy_n(uprev, du, in.begin() + dz);
      for (std::size_t h = 0; h < dh; ++h) {
        double s = maps.b1[c].data[h];
        for (std::size_t j = 0; j < din; ++j) s += in[j] * maps.w1[c].at(j, h);
        hid[h] = std::tanh(s);
      }
      for (std::size_t o = 0; o < dz; ++o) {
        double s = maps.b2[c].data[o];
        for (std::size_t h = 0; h < dh; ++h) s += hid[h] * maps.w2[c].at(h, o);
        head[o] = s;
      }
      Tensor sm = softmax_rows(Tensor({dz}, head));
      std::copy_n(sm.data.begin(), dz, z.data.begin() + (i * T + t) * dz);
    }
  }
  return z;
}

Tensor gen_states(const GenConfig& cfg, const Tensor& v_true, const Tensor& u, Rng& rng) {
  TransitionMaps maps = draw_transition_maps(cfg, rng);
  Tensor z_init({cfg.n, cfg.d_z});
  for (std::size_t i = 0; i < cfg.n; ++i) {
    // Individual-specific initial mean, unit spread around it.
    for (std::size_t j = 0; j < cfg.d_z; ++j) {
      double mu = rng.normal();
      z_init.at(i, j) = mu + rng.normal();
    }
  }
  return simulate_states(cfg, maps, v_true, u, z_init);
}

Tensor gen_observations(const GenConfig& cfg, const Tensor& z_true, Rng& rng) {
  std::size_t N = cfg.n, T = cfg.t, dz = cfg.d_z, dx = cfg.d_x;
  Tensor wx = rng.normal_tensor({dz, dx});
  Tensor bx = rng.normal_tensor({dx});
  Tensor x({N, T, dx});
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      const double* z = z_true.data.data() + (i * T + t) * dz;
      double* row = x.data.data() + (i * T + t) * dx;
      for (std::size_t j = 0; j < dx; ++j) {
        double s = bx.data[j];
        for (std::size_t d = 0; d < dz; ++d) s += z[d] * wx.at(d, j);
        row[j] = s + cfg.noise * rng.normal();
      }
    }
  }
  return x;
}

Tensor argmax_labels(const Tensor& z) {
  std::size_t dz = z.shape.at(2);
  std::size_t nt = z.shape.at(0) * z.shape.at(1);
  Tensor labels({z.shape.at(0), z.shape.at(1)});
  for (std::size_t r = 0; r < nt; ++r) {
    const double* row = z.data.data() + r * dz;
    std::size_t best = 0;
    for (std::size_t j = 1; j < dz; ++j)
      if (row[j] > row[best]) best = j;
    labels.data[r] = static_cast<double>(best + 1);
  }
  return labels;
}

CohortDataset generate_cohort(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  GeneticsDraw gen = gen_genetics(cfg, rng);
  Tensor u = gen_treatments(cfg, rng);
  Tensor z = gen_states(cfg, gen.v_true, u, rng);
  Tensor x = gen_observations(cfg, z, rng);

  CohortDataset ds;
  if (cfg.binary_observations) {
    // Threshold each observation dimension at its pooled median.
    std::size_t dx = cfg.d_x, rows = cfg.n * cfg.t;
    for (std::size_t j = 0; j < dx; ++j) {
      std::vector<double> col(rows);
      for (std::size_t r = 0; r < rows; ++r) col[r] = x.data[r * dx + j];
      std::nth_element(col.begin(), col.begin() + rows / 2, col.end());
      double med = col[rows / 2];
      for (std::size_t r = 0; r < rows; ++r)
        x.data[r * dx + j] = x.data[r * dx + j] > med ? 1.0 : 0.0;
    }
    ds.binary_observations = true;
  }

  ds.x = std::move(x);
  ds.u = std::move(u);
  ds.g = std::move(gen.g);
  ds.lengths.assign(cfg.n, cfg.t);
  ds.seed = cfg.seed;
  ds.config = cfg.to_json();

  GroundTruth gt;
  gt.v_true = std::move(gen.v_true);
  gt.s_true = std::move(gen.s_true);
  gt.state_labels = argmax_labels(z);
  gt.z_true = std::move(z);
  ds.truth = std::move(gt);
  return ds;
}

}  // namespace perdpm
