#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "perdpm/tensor.hpp"

namespace perdpm {

// Generator-side truth kept alongside a synthetic cohort for evaluation.
struct GroundTruth {
  Tensor v_true;        // [N,K] one-hot cluster assignments
  Tensor s_true;        // [K,d_g] cluster genetic means
  Tensor z_true;        // [N,T,d_z]; slot 0 is the pre-softmax initial state
  Tensor state_labels;  // [N,T], values 1..d_z (argmax of z_true)
};

struct CohortDataset {
  Tensor x;  // observations [N,T,d_x]
  Tensor u;  // treatments   [N,T,d_u]
  Tensor g;  // genetics     [N,d_g]
  std::vector<std::size_t> lengths;  // per-sample visit counts T_i <= T
  bool binary_observations = false;
  std::uint64_t seed = 0;
  nlohmann::json config;  // echoed into the manifest
  std::optional<GroundTruth> truth;

  std::size_t n() const { return x.shape.at(0); }
  std::size_t t() const { return x.shape.at(1); }
  std::size_t d_x() const { return x.shape.at(2); }
  std::size_t d_u() const { return u.shape.at(2); }
  std::size_t d_g() const { return g.shape.at(1); }

  CohortDataset subset(const std::vector<std::size_t>& rows) const;
};

// Directory layout: manifest.json plus one flat little-endian f64 file per
// tensor. Round trips are bit-exact.
void write_dataset(const std::filesystem::path& dir, const CohortDataset& ds);
CohortDataset read_dataset(const std::filesystem::path& dir);

// Raw helpers shared with the checkpoint format.
void write_f64_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_f64_file(const std::filesystem::path& path, const Shape& shape);

}  // namespace perdpm
