#pragma once

// Central finite-difference gradient oracle used across the test suites.
// Deliberately independent of the tape's backward pass: it re-runs the
// forward builder at perturbed inputs.

#include <cmath>
#include <functional>
#include <vector>

#include "perdpm/tape.hpp"

namespace fd {

using perdpm::Tape;
using perdpm::Tensor;
using perdpm::Var;

// Builds a scalar loss from leaves; called repeatedly with the same shapes.
using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

inline double eval_loss(const Builder& build, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  return build(tape, vars).value().data[0];
}

struct Report {
  bool ok = true;
  double worst_rel = 0.0;
  std::size_t checked = 0;
};

// Compares tape gradients against central differences for every element of
// every input. rel tolerance with an absolute floor.
inline Report check_gradients(const Builder& build, std::vector<Tensor> inputs,
                              double tol = 1e-4, double h = 1e-5, double abs_floor = 1e-8) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  Var loss = build(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> analytic;
  for (Var v : vars) analytic.push_back(tape.grad(v));

  Report rep;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      double orig = inputs[i].data[j];
      inputs[i].data[j] = orig + h;
      double fplus = eval_loss(build, inputs);
      inputs[i].data[j] = orig - h;
      double fminus = eval_loss(build, inputs);
      inputs[i].data[j] = orig;
      double g_fd = (fplus - fminus) / (2.0 * h);
      double g_ad = analytic[i].data[j];
      double denom = std::max({std::abs(g_fd), std::abs(g_ad), abs_floor / tol});
      double rel = std::abs(g_fd - g_ad) / denom;
      rep.worst_rel = std::max(rep.worst_rel, rel);
      rep.checked++;
      if (rel > tol) rep.ok = false;
    }
  }
  return rep;
}

}  // namespace fd
