#include "perdpm/model.hpp"

#include <fstream>

#include "perdpm/errors.hpp"

namespace perdpm {

using nlohmann::json;

Batch Batch::from(const CohortDataset& ds, const std::vector<std::size_t>& rows) {
  Batch b;
  std::size_t T = ds.t(), dx = ds.d_x(), du = ds.d_u(), dg = ds.d_g();
  b.x = Tensor({rows.size(), T, dx});
  b.u = Tensor({rows.size(), T, du});
  b.g = Tensor({rows.size(), dg});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t i = rows[r];
    std::copy_n(ds.x.data.begin() + i * T * dx, T * dx, b.x.data.begin() + r * T * dx);
    std::copy_n(ds.u.data.begin() + i * T * du, T * du, b.u.data.begin() + r * T * du);
    std::copy_n(ds.g.data.begin() + i * dg, dg, b.g.data.begin() + r * dg);
    b.lengths.push_back(ds.lengths[i]);
  }
  return b;
}

Tensor Batch::at_t(const Tensor& t3, std::size_t step) const {
  std::size_t B = t3.shape.at(0), T = t3.shape.at(1), d = t3.shape.at(2);
  Tensor out({B, d});
  for (std::size_t i = 0; i < B; ++i)
    std::copy_n(t3.data.begin() + (i * T + step) * d, d, out.data.begin() + i * d);
  return out;
}

Tensor Batch::mask_at(std::size_t step) const {
  Tensor m({lengths.size()});
  for (std::size_t i = 0; i < lengths.size(); ++i) m.data[i] = step < lengths[i] ? 1.0 : 0.0;
  return m;
}

Var Bound::operator[](std::string_view name) const {
  return vars[model->param_index(name)];
}

Model::Model(ModelDims dims, EmissionMode mode, bool single_transition_ablation,
             std::uint64_t init_seed)
    : dims_(dims), mode_(mode), dmm_(single_transition_ablation) {
  if (dmm_) dims_.k = 1;
  if (dims_.d_x == 0 || dims_.d_z == 0 || dims_.k == 0) {
    throw ConfigError("model dims: d_x, d_z and K must be positive");
  }
  if (!dmm_ && dims_.d_g == 0) throw ConfigError("model dims: d_g must be positive");
  init_params(init_seed);
}

std::size_t Model::d_in() const {
  return dims_.d_x + dims_.d_u + (dmm_ ? 0 : dims_.d_g);
}

std::size_t Model::t_in() const {
  return dims_.d_z + dims_.d_u + (dmm_ ? 0 : dims_.d_g);
}

void Model::add_param(const std::string& name, Tensor t) {
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(t));
}

void Model::init_params(std::uint64_t seed) {
  Rng rng(seed);
  auto w = [&](Shape s) { return rng.normal_tensor(std::move(s), 0.0, 0.1); };
  auto z = [&](Shape s) { return Tensor(std::move(s)); };
  std::size_t H = dims_.gru_hidden, M = dims_.mlp_hidden;
  std::size_t dz = dims_.d_z, dg = dims_.d_g, K = dims_.k;

  if (!dmm_) {
    add_param("vae.enc.w1", w({dg, M}));
    add_param("vae.enc.b1", z({M}));
    add_param("vae.enc.w2", w({M, 2 * K}));
    add_param("vae.enc.b2", z({2 * K}));
    add_param("vae.dec.S", w({K, dg}));
    add_param("vae.dec.b", z({dg}));
  }

  add_param("gru.wr", w({d_in(), H}));
  add_param("gru.ur", w({H, H}));
  add_param("gru.br", z({H}));
  add_param("gru.wz", w({d_in(), H}));
  add_param("gru.uz", w({H, H}));
  add_param("gru.bz", z({H}));
  add_param("gru.wn", w({d_in(), H}));
  add_param("gru.un", w({H, H}));
  add_param("gru.bn", z({H}));
  add_param("gru.h0", z({H}));
  add_param("inf.z0", z({dz}));
  add_param("comb.gru.w", w({H, 2 * dz}));
  add_param("comb.gru.b", z({2 * dz}));
  add_param("comb.skip.w", w({d_in() + dz, 2 * dz}));
  add_param("comb.skip.b", z({2 * dz}));

  for (std::size_t kk = 0; kk < K; ++kk) {
    std::string p = "trans.k" + std::to_string(kk) + ".";
    add_param(p + "w1", w({t_in(), M}));
    add_param(p + "b1", z({M}));
    add_param(p + "w2", w({M, 2 * dz}));
    add_param(p + "b2", z({2 * dz}));
  }
  add_param("prior0.mu", w({K, dz}));
  add_param("prior0.sigma_raw", z({K, dz}));

  std::size_t out = mode_ == EmissionMode::Gaussian ? 2 * dims_.d_x : dims_.d_x;
  add_param("emit.w1", w({dz, M}));
  add_param("emit.b1", z({M}));
  add_param("emit.w2", w({M, out}));
  add_param("emit.b2", z({out}));
}

std::size_t Model::param_index(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + std::string(name));
  return it->second;
}

Tensor& Model::param(std::string_view name) {
  return values_[param_index(name)];
}

const Tensor& Model::param(std::string_view name) const {
  return values_[param_index(name)];
}

Bound Model::bind(Tape& tape) const {
  Bound b;
  b.tape = &tape;
  b.model = this;
  b.vars.reserve(values_.size());
  for (const Tensor& t : values_) b.vars.push_back(tape.leaf(t));
  return b;
}

namespace {

// affine layer: x [B,n] -> x W + b
Var affine(Var x, Var w, Var bias) { return add_row_vector(matmul(x, w), bias); }

// broadcast a parameter vector [d] to [rows,d]
Var broadcast_rows(Tape& tape, Var v, std::size_t rows) {
  return add_row_vector(tape.constant(Tensor({rows, v.value().size()})), v);
}

}  // namespace

GaussianPair Model::encode_genetics(const Bound& b, Var g) const {
  if (dmm_) throw std::logic_error("encode_genetics: not available in ablation mode");
  if (g.value().cols() != dims_.d_g) {
    throw std::invalid_argument("encode_genetics: expected d_g=" + std::to_string(dims_.d_g) +
                                ", got shape " + shape_str(g.shape()));
  }
  Var h = tanh(affine(g, b["vae.enc.w1"], b["vae.enc.b1"]));
  Var out = affine(h, b["vae.enc.w2"], b["vae.enc.b2"]);
  std::size_t K = dims_.k;
  return {slice_cols(out, 0, K), sigma_head(slice_cols(out, K, 2 * K))};
}

Var Model::decode_genetics(const Bound& b, Var v) const {
  if (dmm_) throw std::logic_error("decode_genetics: not available in ablation mode");
  return add_row_vector(matmul(v, b["vae.dec.S"]), b["vae.dec.b"]);
}

InferStep Model::infer_step(const Bound& b, Var x_t, Var u_t, Var g, Var h_prev,
                            Var z_prev) const {
  Var in = dmm_ ? concat_cols(x_t, u_t) : concat_cols(concat_cols(x_t, u_t), g);
  Var r = sigmoid(add(affine(in, b["gru.wr"], b["gru.br"]), matmul(h_prev, b["gru.ur"])));
  Var zg = sigmoid(add(affine(in, b["gru.wz"], b["gru.bz"]), matmul(h_prev, b["gru.uz"])));
  Var n = tanh(add(affine(in, b["gru.wn"], b["gru.bn"]), mul(r, matmul(h_prev, b["gru.un"]))));
  // h' = (1-zg) n + zg h
  Var h = add(n, mul(zg, sub(h_prev, n)));

  std::size_t dz = dims_.d_z;
  Var head1 = affine(h, b["comb.gru.w"], b["comb.gru.b"]);
  Var mu1 = slice_cols(head1, 0, dz);
  Var s1 = sigma_head(slice_cols(head1, dz, 2 * dz));
  Var head2 = affine(concat_cols(in, z_prev), b["comb.skip.w"], b["comb.skip.b"]);
  Var mu2 = slice_cols(head2, 0, dz);
  Var s2 = sigma_head(slice_cols(head2, dz, 2 * dz));
  GaussianPair fused = gaussian_fusion(mu1, s1, mu2, s2);
  return {h, fused.mu, fused.sigma};
}

GaussianPair Model::transition_prior(const Bound& b, Var z_prev, Var u_t, Var attention) const {
  std::size_t K = dims_.k, dz = dims_.d_z;
  if (attention.value().cols() != K) {
    throw std::invalid_argument("transition_prior: attention has " +
                                std::to_string(attention.value().cols()) +
                                " columns for K=" + std::to_string(K));
  }
  std::size_t B = z_prev.value().rows();
  Var base = concat_cols(z_prev, u_t);
  Var mu_acc{}, sigma_acc{};
  for (std::size_t kk = 0; kk < K; ++kk) {
    std::string p = "trans.k" + std::to_string(kk) + ".";
    Var in = base;
    if (!dmm_) {
      Var s_row = reshape(slice_rows(b["vae.dec.S"], kk, kk + 1), {dims_.d_g});
      in = concat_cols(base, broadcast_rows(*b.tape, s_row, B));
    }
    Var h = tanh(affine(in, b[p + "w1"], b[p + "b1"]));
    Var out = affine(h, b[p + "w2"], b[p + "b2"]);
    Var mu_k = slice_cols(out, 0, dz);
    Var sigma_k = sigma_head(slice_cols(out, dz, 2 * dz));
    Var a_k = reshape(slice_cols(attention, kk, kk + 1), {B});
    Var mu_w = scale_rows(mu_k, a_k);
    Var sigma_w = scale_rows(sigma_k, a_k);
    mu_acc = kk == 0 ? mu_w : add(mu_acc, mu_w);
    sigma_acc = kk == 0 ? sigma_w : add(sigma_acc, sigma_w);
  }
  return {mu_acc, sigma_acc};
}

GaussianPair Model::initial_prior(const Bound& b, Var attention) const {
  Var mu = matmul(attention, b["prior0.mu"]);
  Var sigma = matmul(attention, sigma_head(b["prior0.sigma_raw"]));
  return {mu, sigma};
}

Emission Model::emit(const Bound& b, Var z) const {
  Var h = relu(affine(z, b["emit.w1"], b["emit.b1"]));
  Var out = affine(h, b["emit.w2"], b["emit.b2"]);
  Emission e;
  if (mode_ == EmissionMode::Gaussian) {
    e.mu = slice_cols(out, 0, dims_.d_x);
    e.sigma = sigma_head(slice_cols(out, dims_.d_x, 2 * dims_.d_x));
  } else {
    e.probs = clamp(sigmoid(out), kProbEps, 1.0 - kProbEps);
  }
  return e;
}

Rollout Model::roll(const Bound& b, const Batch& batch, Rng* sample_rng) const {
  std::size_t B = batch.b(), T = batch.t();
  Tape& tape = *b.tape;
  Rollout out;

  Var g{};
  if (!dmm_) {
    g = tape.constant(batch.g);
    out.v_post = encode_genetics(b, g);
    out.v = sample_rng ? gaussian_sample(out.v_post.mu, out.v_post.sigma, *sample_rng)
                       : out.v_post.mu;
    out.g_hat = decode_genetics(b, out.v);
    out.attention = softmax_rows(out.v);
  } else {
    out.attention = tape.constant(Tensor::full({B, 1}, 1.0));
  }

  Var h = broadcast_rows(tape, b["gru.h0"], B);
  Var z_prev = broadcast_rows(tape, b["inf.z0"], B);
  out.steps.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Var x_t = tape.constant(batch.at_t(batch.x, t));
    Var u_t = tape.constant(batch.at_t(batch.u, t));
    InferStep st = infer_step(b, x_t, u_t, g, h, z_prev);
    h = st.h;
    RolloutStep step;
    step.mu_post = st.mu;
    step.sigma_post = st.sigma;
    step.z = sample_rng ? gaussian_sample(st.mu, st.sigma, *sample_rng) : st.mu;
    GaussianPair prior = t == 0 ? initial_prior(b, out.attention)
                                : transition_prior(b, z_prev, u_t, out.attention);
    step.prior_mu = prior.mu;
    step.prior_sigma = prior.sigma;
    step.emission = emit(b, step.z);
    z_prev = step.z;
    out.steps.push_back(step);
  }
  return out;
}

void Model::save(const std::filesystem::path& dir, const json& training_info) const {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "perdpm-model";
  manifest["mode"] = mode_ == EmissionMode::Gaussian ? "gaussian" : "bernoulli";
  manifest["ablation"] = dmm_ ? "dmm" : "none";
  manifest["dims"] = {{"d_x", dims_.d_x}, {"d_u", dims_.d_u}, {"d_g", dims_.d_g},
                      {"d_z", dims_.d_z}, {"K", dims_.k},     {"gru_hidden", dims_.gru_hidden},
                      {"mlp_hidden", dims_.mlp_hidden}};
  if (!training_info.is_null() && !training_info.empty()) manifest["training"] = training_info;
  json params = json::array();
  for (std::size_t i = 0; i < names_.size(); ++i) {
    std::string file = names_[i] + ".bin";
    params.push_back({{"name", names_[i]}, {"shape", values_[i].shape}, {"file", file}});
    write_f64_file(dir / file, values_[i]);
  }
  manifest["params"] = params;
  std::ofstream out(dir / "model.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write model manifest to " + dir.string());
}

Model Model::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw ConfigError("missing model manifest: " + (dir / "model.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ConfigError("corrupt model manifest: " + std::string(e.what()));
  }
  ModelDims dims;
  const json& d = manifest.at("dims");
  dims.d_x = d.at("d_x").get<std::size_t>();
  dims.d_u = d.at("d_u").get<std::size_t>();
  dims.d_g = d.at("d_g").get<std::size_t>();
  dims.d_z = d.at("d_z").get<std::size_t>();
  dims.k = d.at("K").get<std::size_t>();
  dims.gru_hidden = d.at("gru_hidden").get<std::size_t>();
  dims.mlp_hidden = d.at("mlp_hidden").get<std::size_t>();
  EmissionMode mode =
      manifest.at("mode").get<std::string>() == "bernoulli" ? EmissionMode::Bernoulli
                                                            : EmissionMode::Gaussian;
  bool dmm = manifest.value("ablation", "none") == "dmm";
  Model m(dims, mode, dmm, 0);
  for (const auto& p : manifest.at("params")) {
    std::string name = p.at("name").get<std::string>();
    Shape shape;
    for (const auto& e : p.at("shape")) shape.push_back(e.get<std::size_t>());
    Tensor t = read_f64_file(dir / p.at("file").get<std::string>(), shape);
    Tensor& slot = m.param(name);
    if (slot.shape != t.shape) {
      throw ConfigError("parameter " + name + " has shape " + shape_str(t.shape) +
                        " but the model expects " + shape_str(slot.shape));
    }
    slot = std::move(t);
  }
  m.training_info_ = manifest.value("training", json::object());
  return m;
}

}  // namespace perdpm
