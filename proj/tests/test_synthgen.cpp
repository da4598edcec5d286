#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "perdpm/dataset.hpp"
#include "perdpm/errors.hpp"
#include "perdpm/synthgen.hpp"

using namespace perdpm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("perdpm_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config validation names the field") {
  GenConfig cfg;
  cfg.k = 0;
  try {
    cfg.validate();
    FAIL("expected throw");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("K") != std::string::npos);
  }
  CHECK_THROWS_AS(GenConfig::from_json({{"N", 0}}), ConfigError);
  CHECK_THROWS_AS(GenConfig::from_json({{"noise", "loud"}}), ConfigError);
}

TEST_CASE("single-cluster genetics obey a CLT bound on the sample mean") {
  GenConfig cfg;
  cfg.k = 1;
  cfg.n = 4000;
  cfg.d_g = 4;
  cfg.seed = 11;
  Rng rng(cfg.seed);
  auto draw = gen_genetics(cfg, rng);
  double bound = 3.0 / std::sqrt(static_cast<double>(cfg.n));
  for (std::size_t j = 0; j < cfg.d_g; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < cfg.n; ++i) m += draw.g.at(i, j);
    m /= static_cast<double>(cfg.n);
    CHECK(std::abs(m - draw.s_true.at(0, j)) < bound);
  }
}

TEST_CASE("genetics shapes") {
  GenConfig cfg;
  cfg.k = 1;
  cfg.n = 3;
  cfg.d_g = 2;
  Rng rng(0);
  auto draw = gen_genetics(cfg, rng);
  CHECK(draw.g.shape == Shape{3, 2});
  CHECK(draw.v_true.shape == Shape{3, 1});
  CHECK(draw.s_true.shape == Shape{1, 2});
  for (std::size_t i = 0; i < 3; ++i) CHECK(draw.v_true.at(i, 0) == 1.0);
}

TEST_CASE("separated clusters are recovered by a nearest-centroid oracle") {
  GenConfig cfg;
  cfg.k = 2;
  cfg.n = 2000;
  cfg.d_g = 6;
  cfg.mean_separation = 5.0;
  cfg.seed = 5;
  Rng rng(cfg.seed);
  auto draw = gen_genetics(cfg, rng);
  // verify the forced separation
  for (std::size_t j = 0; j < cfg.d_g; ++j)
    CHECK(std::abs(draw.s_true.at(0, j) - draw.s_true.at(1, j)) >= 5.0 - 1e-12);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < cfg.n; ++i) {
    double d0 = 0, d1 = 0;
    for (std::size_t j = 0; j < cfg.d_g; ++j) {
      d0 += std::pow(draw.g.at(i, j) - draw.s_true.at(0, j), 2);
      d1 += std::pow(draw.g.at(i, j) - draw.s_true.at(1, j), 2);
    }
    std::size_t pred = d1 < d0 ? 1 : 0;
    hits += (pred == draw.cluster[i]);
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(cfg.n) >= 0.95);
}

TEST_CASE("treatment window ordering") {
  CHECK(treatment_window(7, 2) == std::make_pair<std::size_t, std::size_t>(2, 7));
  CHECK(treatment_window(3, 3).first == treatment_window(3, 3).second);  // empty block
}

TEST_CASE("treatment rows are contiguous blocks with ~1/3 mean coverage") {
  GenConfig cfg;
  cfg.n = 10000;
  cfg.t = 12;
  cfg.d_u = 2;
  Rng rng(17);
  Tensor u = gen_treatments(cfg, rng);
  double treated = 0.0;
  for (std::size_t i = 0; i < cfg.n; ++i) {
    for (std::size_t j = 0; j < cfg.d_u; ++j) {
      // contiguity: number of 0->1 and 1->0 flips along t is at most 2
      int flips = 0;
      double prev = 0.0;
      for (std::size_t t = 0; t < cfg.t; ++t) {
        double v = u.data[(i * cfg.t + t) * cfg.d_u + j];
        CHECK((v == 0.0 || v == 1.0));
        if (v != prev) ++flips;
        prev = v;
        if (j == 0) treated += v;
      }
      CHECK(flips <= 2);
    }
  }
  double frac = treated / static_cast<double>(cfg.n * cfg.t);
  CHECK(frac == doctest::Approx(1.0 / 3.0).epsilon(0.06));  // +-0.02 absolute
}

TEST_CASE("state rows after the initial slot lie on the simplex") {
  GenConfig cfg;
  cfg.n = 40;
  cfg.t = 8;
  cfg.seed = 3;
  CohortDataset ds = generate_cohort(cfg);
  const Tensor& z = ds.truth->z_true;
  for (std::size_t i = 0; i < cfg.n; ++i) {
    for (std::size_t t = 1; t < cfg.t; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < cfg.d_z; ++j) {
        double v = z.data[(i * cfg.t + t) * cfg.d_z + j];
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("identical inputs give identical trajectories") {
  GenConfig cfg;
  cfg.n = 2;
  cfg.t = 6;
  cfg.k = 3;
  Rng rng(9);
  TransitionMaps maps = draw_transition_maps(cfg, rng);
  Tensor v({2, 3});
  v.at(0, 1) = 1.0;
  v.at(1, 1) = 1.0;  // same cluster
  Tensor u({cfg.n, cfg.t, cfg.d_u});
  Tensor z0({2, cfg.d_z});
  for (std::size_t j = 0; j < cfg.d_z; ++j) z0.at(0, j) = z0.at(1, j) = 0.3 * (j + 1);
  Tensor z = simulate_states(cfg, maps, v, u, z0);
  for (std::size_t t = 0; t < cfg.t; ++t)
    for (std::size_t j = 0; j < cfg.d_z; ++j)
      CHECK(z.data[(0 * cfg.t + t) * cfg.d_z + j] == z.data[(1 * cfg.t + t) * cfg.d_z + j]);
}

TEST_CASE("cross-cluster trajectories separate from a shared start") {
  // Two samples in different clusters, same initial state, no treatment:
  // the trajectory gap at the last step must exceed the (zero) gap at the
  // first slot. Holds for >= 90% of generator seeds.
  GenConfig cfg;
  cfg.n = 2;
  cfg.t = 10;
  cfg.k = 2;
  std::size_t wins = 0;
  const int seeds = 100;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(1000 + s);
    TransitionMaps maps = draw_transition_maps(cfg, rng);
    Tensor v({2, 2});
    v.at(0, 0) = 1.0;
    v.at(1, 1) = 1.0;
    Tensor u({cfg.n, cfg.t, cfg.d_u});
    Tensor z0({2, cfg.d_z});
    for (std::size_t j = 0; j < cfg.d_z; ++j) {
      double x = rng.normal() + rng.normal();
      z0.at(0, j) = x;
      z0.at(1, j) = x;
    }
    Tensor z = simulate_states(cfg, maps, v, u, z0);
    auto dist_at = [&](std::size_t t) {
      double d = 0.0;
      for (std::size_t j = 0; j < cfg.d_z; ++j)
        d += std::pow(z.data[(0 * cfg.t + t) * cfg.d_z + j] -
                          z.data[(1 * cfg.t + t) * cfg.d_z + j],
                      2);
      return std::sqrt(d);
    };
    if (dist_at(cfg.t - 1) > dist_at(0)) ++wins;
  }
  CHECK(wins >= 90);
}

TEST_CASE("noiseless observations are exactly affine in the states") {
  GenConfig cfg;
  cfg.n = 50;
  cfg.t = 6;
  cfg.noise = 0.0;
  cfg.seed = 21;
  CohortDataset ds = generate_cohort(cfg);
  const Tensor& z = ds.truth->z_true;
  // least-squares oracle: fit X ~ [Z, 1] and check residuals ~ 0
  std::size_t rows = cfg.n * cfg.t, dz = cfg.d_z, dx = cfg.d_x;
  Eigen::MatrixXd A(rows, dz + 1);
  Eigen::MatrixXd B(rows, dx);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < dz; ++j) A(r, j) = z.data[r * dz + j];
    A(r, dz) = 1.0;
    for (std::size_t j = 0; j < dx; ++j) B(r, j) = ds.x.data[r * dx + j];
  }
  Eigen::MatrixXd coef = A.colPivHouseholderQr().solve(B);
  double resid = (A * coef - B).cwiseAbs().maxCoeff();
  CHECK(resid < 1e-8);

  CHECK(ds.x.shape == Shape{cfg.n, cfg.t, cfg.d_x});
}

TEST_CASE("constant states give observations that differ only by noise") {
  GenConfig cfg;
  cfg.n = 4;
  cfg.t = 5;
  cfg.noise = 0.0;
  Rng rng(2);
  Tensor z = Tensor({cfg.n, cfg.t, cfg.d_z});
  for (std::size_t i = 0; i < cfg.n; ++i)
    for (std::size_t t = 0; t < cfg.t; ++t)
      for (std::size_t j = 0; j < cfg.d_z; ++j)
        z.data[(i * cfg.t + t) * cfg.d_z + j] = 0.1 * (j + 1) * (i + 1);
  Tensor x = gen_observations(cfg, z, rng);
  for (std::size_t i = 0; i < cfg.n; ++i)
    for (std::size_t t = 1; t < cfg.t; ++t)
      for (std::size_t j = 0; j < cfg.d_x; ++j)
        CHECK(x.data[(i * cfg.t + t) * cfg.d_x + j] ==
              doctest::Approx(x.data[(i * cfg.t) * cfg.d_x + j]).epsilon(1e-14));
}

TEST_CASE("fixed seed gives a bit-identical cohort") {
  GenConfig cfg;
  cfg.n = 25;
  cfg.t = 7;
  cfg.seed = 1234;
  CohortDataset a = generate_cohort(cfg);
  CohortDataset b = generate_cohort(cfg);
  CHECK(a.x.data == b.x.data);
  CHECK(a.u.data == b.u.data);
  CHECK(a.g.data == b.g.data);
  CHECK(a.truth->z_true.data == b.truth->z_true.data);
}

TEST_CASE("dataset round trip is bit-exact") {
  GenConfig cfg;
  cfg.n = 12;
  cfg.t = 5;
  cfg.seed = 77;
  CohortDataset ds = generate_cohort(cfg);
  fs::path dir = temp_dir("roundtrip");
  write_dataset(dir, ds);
  CohortDataset back = read_dataset(dir);
  CHECK(back.x.data == ds.x.data);
  CHECK(back.u.data == ds.u.data);
  CHECK(back.g.data == ds.g.data);
  CHECK(back.lengths == ds.lengths);
  CHECK(back.truth.has_value());
  CHECK(back.truth->v_true.data == ds.truth->v_true.data);
  CHECK(back.truth->state_labels.data == ds.truth->state_labels.data);
  fs::remove_all(dir);
}

TEST_CASE("manifest with a wrong shape is rejected") {
  GenConfig cfg;
  cfg.n = 6;
  cfg.t = 4;
  CohortDataset ds = generate_cohort(cfg);
  fs::path dir = temp_dir("corrupt");
  write_dataset(dir, ds);
  // corrupt the manifest: claim a different N for X
  std::ifstream in(dir / "manifest.json");
  nlohmann::json manifest;
  in >> manifest;
  in.close();
  manifest["tensors"]["X"]["shape"][0] = 7;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2);
  out.close();
  CHECK_THROWS(read_dataset(dir));
  fs::remove_all(dir);
}

TEST_CASE("dataset without ground truth reads back without it") {
  GenConfig cfg;
  cfg.n = 6;
  cfg.t = 4;
  CohortDataset ds = generate_cohort(cfg);
  ds.truth.reset();
  fs::path dir = temp_dir("nogt");
  write_dataset(dir, ds);
  CohortDataset back = read_dataset(dir);
  CHECK(!back.truth.has_value());
  fs::remove_all(dir);
}

TEST_CASE("binarized cohorts carry 0/1 observations and the binary flag") {
  GenConfig cfg;
  cfg.n = 30;
  cfg.t = 6;
  cfg.binary_observations = true;
  CohortDataset ds = generate_cohort(cfg);
  CHECK(ds.binary_observations);
  for (double v : ds.x.data) CHECK((v == 0.0 || v == 1.0));
  // median threshold keeps the classes roughly balanced per dimension
  for (std::size_t j = 0; j < cfg.d_x; ++j) {
    double frac = 0.0;
    for (std::size_t r = 0; r < cfg.n * cfg.t; ++r) frac += ds.x.data[r * cfg.d_x + j];
    frac /= static_cast<double>(cfg.n * cfg.t);
    CHECK(frac > 0.3);
    CHECK(frac < 0.7);
  }
}
