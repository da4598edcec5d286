#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "perdpm/rng.hpp"
#include "perdpm/tape.hpp"

using namespace perdpm;

TEST_CASE("tensor shape/data mismatch is rejected") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), std::invalid_argument);
  Tensor t({2, 2}, {1, 2, 3, 4});
  CHECK(t.at(1, 0) == 3);
}

TEST_CASE("relu, softplus, matmul forward examples") {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {-1, 0, 2}));
  Var r = relu(x);
  CHECK(r.value().data == std::vector<double>{0, 0, 2});

  Var sp = softplus(tape.leaf(Tensor::scalar(0.0)));
  CHECK(sp.value().data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Var a = tape.leaf(Tensor::full({2, 3}, 1.0));
  Var b = tape.leaf(Tensor::full({3, 2}, 1.0));
  Var c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  for (double v : c.value().data) CHECK(v == 3.0);
}

TEST_CASE("shape mismatch errors name the op and shapes") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}));
  Var b = tape.leaf(Tensor({2, 2}));
  try {
    matmul(a, b);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
}

TEST_CASE("softmax_rows examples and stability") {
  Tape tape;
  Var z = softmax_rows(tape.leaf(Tensor({3}, {0, 0, 0})));
  for (double v : z.value().data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  Var s = softmax_rows(tape.leaf(Tensor({2}, {1000, 0})));
  CHECK(s.value().data[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.value().data[1] == doctest::Approx(0.0).scale(1).epsilon(1e-12));

  // exp(ln k) = k, so probabilities are k / 6
  Var w = softmax_rows(
      tape.leaf(Tensor({3}, {std::log(1.0), std::log(2.0), std::log(3.0)})));
  CHECK(w.value().data[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(w.value().data[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
  CHECK(w.value().data[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_rows(Tensor({0})), std::invalid_argument);
}

TEST_CASE("softmax_rows rows sum to one and shift invariance (property)") {
  Rng rng(7);
  for (int rep = 0; rep < 200; ++rep) {
    std::size_t r = 1 + rng.uniform_index(4), c = 1 + rng.uniform_index(6);
    Tensor m = rng.normal_tensor({r, c}, 0.0, 3.0);
    Tensor p = softmax_rows(m);
    Tensor shifted = m;
    double delta = rng.normal(0, 10);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += p.at(i, j);
      CHECK(std::abs(s - 1.0) <= 1e-12);
      for (std::size_t j = 0; j < c; ++j) shifted.at(i, j) += delta;
    }
    Tensor p2 = softmax_rows(shifted);
    for (std::size_t k = 0; k < p.size(); ++k)
      CHECK(p2.data[k] == doctest::Approx(p.data[k]).epsilon(1e-9));
  }
}

TEST_CASE("backward closed-form examples") {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1, 2}));
  Var loss = sum(square(x));
  tape.backward(loss);
  CHECK(tape.grad(x).data == std::vector<double>{2, 4});

  // constant loss: gradient of unused leaf is zero
  Tape t2;
  Var y = t2.leaf(Tensor({3}, {1, 2, 3}));
  Var c = t2.leaf(Tensor::scalar(5.0));
  t2.backward(c);
  for (double v : t2.grad(y).data) CHECK(v == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("two-layer tanh net gradients match finite differences") {
  Rng rng(42);
  std::vector<Tensor> inputs = {
      rng.normal_tensor({4, 3}), rng.normal_tensor({3, 8}, 0, 0.5),
      rng.normal_tensor({8}, 0, 0.1), rng.normal_tensor({8, 2}, 0, 0.5),
      rng.normal_tensor({2}, 0, 0.1)};
  auto build = [](Tape&, std::vector<Var>& v) {
    Var h = tanh(add_row_vector(matmul(v[0], v[1]), v[2]));
    Var out = add_row_vector(matmul(h, v[3]), v[4]);
    return mean(square(out));
  };
  auto rep = fd::check_gradients(build, inputs);
  CHECK(rep.ok);
  CHECK(rep.worst_rel <= 1e-4);
}

namespace {

// Draws an input for an op, keeping values away from kinks and poles.
Tensor safe_input(Rng& rng, const Shape& s, const char* domain) {
  Tensor t = rng.normal_tensor(s);
  for (double& x : t.data) {
    if (std::string(domain) == "positive") {
      x = std::abs(x) + 0.5;
    } else if (std::string(domain) == "nonzero") {
      x = (x >= 0 ? 1.0 : -1.0) * (std::abs(x) + 0.5);
    } else if (std::string(domain) == "offkink") {
      if (std::abs(x) < 0.05) x += (x >= 0 ? 0.1 : -0.1);
    }
  }
  return t;
}

void check_primitive(const char* name, const fd::Builder& build,
                     const std::vector<std::function<Tensor(Rng&, std::size_t, std::size_t)>>& gens) {
  Rng rng(1234);
  for (int rep = 0; rep < 20; ++rep) {
    std::size_t r = 1 + rng.uniform_index(4);
    std::size_t c = 1 + rng.uniform_index(5);
    std::vector<Tensor> inputs;
    for (const auto& gen : gens) inputs.push_back(gen(rng, r, c));
    auto report = fd::check_gradients(build, inputs);
    INFO(name << " rep " << rep << " worst rel err " << report.worst_rel);
    CHECK(report.ok);
  }
}

Var weighted(Tape& tape, Var x) {
  // Fixed cotangent so every output element gets a distinct weight; must be
  // a pure function of the shape, since the builder is re-run by the
  // finite-difference oracle.
  Rng wrng(777);
  Tensor w = wrng.normal_tensor(x.shape());
  return sum(mul(x, tape.constant(w)));
}

}  // namespace

TEST_CASE("every primitive passes a randomized finite-difference check") {
  auto any = [](Rng& r, std::size_t a, std::size_t b) { return r.normal_tensor({a, b}); };
  auto positive = [](Rng& r, std::size_t a, std::size_t b) {
    return safe_input(r, {a, b}, "positive");
  };
  auto nonzero = [](Rng& r, std::size_t a, std::size_t b) {
    return safe_input(r, {a, b}, "nonzero");
  };
  auto offkink = [](Rng& r, std::size_t a, std::size_t b) {
    return safe_input(r, {a, b}, "offkink");
  };
  auto rowvec = [](Rng& r, std::size_t, std::size_t b) { return r.normal_tensor({b}); };
  auto colvec = [](Rng& r, std::size_t a, std::size_t) { return r.normal_tensor({a}); };

  check_primitive("matmul",
                  [](Tape& t, std::vector<Var>& v) { return weighted(t, matmul(v[0], v[1])); },
                  {any, [](Rng& r, std::size_t, std::size_t b) {
                     return r.normal_tensor({b, 3});
                   }});
  check_primitive("add", [](Tape& t, std::vector<Var>& v) { return weighted(t, add(v[0], v[1])); }, {any, any});
  check_primitive("sub", [](Tape& t, std::vector<Var>& v) { return weighted(t, sub(v[0], v[1])); }, {any, any});
  check_primitive("mul", [](Tape& t, std::vector<Var>& v) { return weighted(t, mul(v[0], v[1])); }, {any, any});
  check_primitive("div", [](Tape& t, std::vector<Var>& v) { return weighted(t, div(v[0], v[1])); }, {any, nonzero});
  check_primitive("scale", [](Tape& t, std::vector<Var>& v) { return weighted(t, scale(v[0], -1.7)); }, {any});
  check_primitive("add_scalar", [](Tape& t, std::vector<Var>& v) { return weighted(t, add_scalar(v[0], 0.3)); }, {any});
  check_primitive("concat_cols", [](Tape& t, std::vector<Var>& v) { return weighted(t, concat_cols(v[0], v[1])); },
                  {any, [](Rng& r, std::size_t a, std::size_t) { return r.normal_tensor({a, 2}); }});
  check_primitive("slice_cols", [](Tape& t, std::vector<Var>& v) { return weighted(t, slice_cols(v[0], 0, 1)); }, {any});
  check_primitive("slice_rows", [](Tape& t, std::vector<Var>& v) { return weighted(t, slice_rows(v[0], 0, 1)); }, {any});
  check_primitive("reshape", [](Tape& t, std::vector<Var>& v) {
    return weighted(t, reshape(v[0], {v[0].value().size()})); }, {any});
  check_primitive("sum", [](Tape&, std::vector<Var>& v) { return sum(v[0]); }, {any});
  check_primitive("mean", [](Tape&, std::vector<Var>& v) { return mean(v[0]); }, {any});
  check_primitive("row_sum", [](Tape& t, std::vector<Var>& v) { return weighted(t, row_sum(v[0])); }, {any});
  check_primitive("add_row_vector", [](Tape& t, std::vector<Var>& v) { return weighted(t, add_row_vector(v[0], v[1])); },
                  {any, rowvec});
  check_primitive("scale_rows", [](Tape& t, std::vector<Var>& v) { return weighted(t, scale_rows(v[0], v[1])); },
                  {any, colvec});
  check_primitive("sigmoid", [](Tape& t, std::vector<Var>& v) { return weighted(t, sigmoid(v[0])); }, {any});
  check_primitive("tanh", [](Tape& t, std::vector<Var>& v) { return weighted(t, tanh(v[0])); }, {any});
  check_primitive("relu", [](Tape& t, std::vector<Var>& v) { return weighted(t, relu(v[0])); }, {offkink});
  check_primitive("softplus", [](Tape& t, std::vector<Var>& v) { return weighted(t, softplus(v[0])); }, {any});
  check_primitive("exp", [](Tape& t, std::vector<Var>& v) { return weighted(t, exp(v[0])); }, {any});
  check_primitive("log", [](Tape& t, std::vector<Var>& v) { return weighted(t, log(v[0])); }, {positive});
  check_primitive("sqrt", [](Tape& t, std::vector<Var>& v) { return weighted(t, sqrt(v[0])); }, {positive});
  check_primitive("softmax_rows", [](Tape& t, std::vector<Var>& v) { return weighted(t, softmax_rows(v[0])); }, {any});
  check_primitive("clamp", [](Tape& t, std::vector<Var>& v) { return weighted(t, clamp(v[0], -0.8, 0.8)); },
                  {[](Rng& r, std::size_t a, std::size_t b) {
                    Tensor t = r.normal_tensor({a, b});
                    for (double& x : t.data)
                      if (std::abs(std::abs(x) - 0.8) < 0.05) x *= 1.3;
                    return t;
                  }});
}

TEST_CASE("non-finite forward values are reported") {
  Tape tape;
  Var x = tape.leaf(Tensor({1}, {-1.0}));
  CHECK_THROWS_AS(log(x), std::runtime_error);
}

TEST_CASE("identical seeds give bit-identical streams") {
  Rng a(2026), b(2026);
  Tensor ta = a.normal_tensor({64}), tb = b.normal_tensor({64});
  CHECK(ta.data == tb.data);
  Tensor ua = a.uniform_tensor({64}, -2, 2), ub = b.uniform_tensor({64}, -2, 2);
  CHECK(ua.data == ub.data);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform_index(17) == b.uniform_index(17));
}
