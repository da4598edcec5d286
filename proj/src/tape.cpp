#include "perdpm/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace perdpm {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatRM>;
using ConstMatMap = Eigen::Map<const MatRM>;

ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

MatMap as_mat(Tensor& t) {
  return MatMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(Op op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op_name(op)) + ": incompatible shapes " +
                              shape_str(a.shape) + " and " + shape_str(b.shape));
}

[[noreturn]] void shape_error(Op op, const Tensor& a, const std::string& why) {
  throw std::invalid_argument(std::string(op_name(op)) + ": " + why + " (shape " +
                              shape_str(a.shape) + ")");
}

void require_2d(Op op, const Tensor& t) {
  if (t.rank() != 2) shape_error(op, t, "expected a rank-2 tensor");
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceCols: return "slice_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::Reshape: return "reshape";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::RowSum: return "row_sum";
    case Op::AddRowVector: return "add_row_vector";
    case Op::ScaleRows: return "scale_rows";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Softplus: return "softplus";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::Clamp: return "clamp";
  }
  return "?";
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  // max(x,0) + log1p(exp(-|x|)) avoids overflow on both tails
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

const Tensor& Var::value() const { return tape->value(id); }
const Shape& Var::shape() const { return tape->value(id).shape; }

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = Op::Leaf;
  return emit(std::move(n));
}

Var Tape::emit(Node node) {
  if (check_finite_ && node.op != Op::Leaf && !node.value.all_finite()) {
    throw std::runtime_error(std::string("non-finite values produced by ") + op_name(node.op));
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buf(int id) {
  if (grads_[id].data.empty()) grads_[id] = Tensor(nodes_[id].value.shape);
  return grads_[id];
}

const Tensor& Tape::grad(Var v) { return grad_buf(v.id); }

namespace {

// dL/dx contributions for elementwise unary ops given value y = f(x).
double unary_dx(Op op, double x, double y, double g, double p0, double p1) {
  switch (op) {
    case Op::Sigmoid: return g * y * (1.0 - y);
    case Op::Tanh: return g * (1.0 - y * y);
    case Op::Relu: return x > 0.0 ? g : 0.0;
    case Op::Softplus: return g * sigmoid_scalar(x);
    case Op::Exp: return g * y;
    case Op::Log: return g / x;
    case Op::Sqrt: return g * 0.5 / y;
    case Op::Clamp: return (x > p0 && x < p1) ? g : 0.0;
    case Op::Scale: return g * p0;
    case Op::AddScalar: return g;
    default: throw std::logic_error("unary_dx: not a unary op");
  }
}

}  // namespace

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(nodes_[loss.id].value.shape));
  }
  grads_.assign(nodes_.size(), Tensor{});
  grad_buf(loss.id).data[0] = 1.0;

  for (int i = loss.id; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (n.op == Op::Leaf) continue;
    if (grads_[i].data.empty()) continue;  // node unused by the loss
    const Tensor& g = grads_[i];
    if (!g.all_finite()) {
      throw std::runtime_error(std::string("non-finite gradient at ") + op_name(n.op));
    }
    const Tensor& va = nodes_[n.a].value;
    switch (n.op) {
      case Op::MatMul: {
        const Tensor& vb = nodes_[n.b].value;
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        as_mat(ga).noalias() += as_mat(g) * as_mat(vb).transpose();
        as_mat(gb).noalias() += as_mat(va).transpose() * as_mat(g);
        break;
      }
      case Op::Add: {
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga.data[k] += g.data[k];
          gb.data[k] += g.data[k];
        }
        break;
      }
      case Op::Sub: {
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga.data[k] += g.data[k];
          gb.data[k] -= g.data[k];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& vb = nodes_[n.b].value;
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga.data[k] += g.data[k] * vb.data[k];
          gb.data[k] += g.data[k] * va.data[k];
        }
        break;
      }
      case Op::Div: {
        const Tensor& vb = nodes_[n.b].value;
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga.data[k] += g.data[k] / vb.data[k];
          gb.data[k] -= g.data[k] * va.data[k] / (vb.data[k] * vb.data[k]);
        }
        break;
      }
      case Op::ConcatCols: {
        const Tensor& vb = nodes_[n.b].value;
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        std::size_t ca = va.cols(), cb = vb.cols(), r = va.rows();
        for (std::size_t i2 = 0; i2 < r; ++i2) {
          for (std::size_t j = 0; j < ca; ++j) ga.at(i2, j) += g.at(i2, j);
          for (std::size_t j = 0; j < cb; ++j) gb.at(i2, j) += g.at(i2, ca + j);
        }
        break;
      }
      case Op::SliceCols: {
        Tensor& ga = grad_buf(n.a);
        std::size_t lo = static_cast<std::size_t>(n.p0);
        for (std::size_t i2 = 0; i2 < g.rows(); ++i2)
          for (std::size_t j = 0; j < g.cols(); ++j) ga.at(i2, lo + j) += g.at(i2, j);
        break;
      }
      case Op::SliceRows: {
        Tensor& ga = grad_buf(n.a);
        std::size_t lo = static_cast<std::size_t>(n.p0);
        for (std::size_t i2 = 0; i2 < g.rows(); ++i2)
          for (std::size_t j = 0; j < g.cols(); ++j) ga.at(lo + i2, j) += g.at(i2, j);
        break;
      }
      case Op::Reshape: {
        Tensor& ga = grad_buf(n.a);
        for (std::size_t k = 0; k < g.size(); ++k) ga.data[k] += g.data[k];
        break;
      }
      case Op::Sum: {
        Tensor& ga = grad_buf(n.a);
        for (double& x : ga.data) x += g.data[0];
        break;
      }
      case Op::Mean: {
        Tensor& ga = grad_buf(n.a);
        double s = g.data[0] / static_cast<double>(va.size());
        for (double& x : ga.data) x += s;
        break;
      }
      case Op::RowSum: {
        Tensor& ga = grad_buf(n.a);
        for (std::size_t i2 = 0; i2 < va.rows(); ++i2)
          for (std::size_t j = 0; j < va.cols(); ++j) ga.at(i2, j) += g.data[i2];
        break;
      }
      case Op::AddRowVector: {
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        for (std::size_t i2 = 0; i2 < g.rows(); ++i2)
          for (std::size_t j = 0; j < g.cols(); ++j) {
            ga.at(i2, j) += g.at(i2, j);
            gb.data[j] += g.at(i2, j);
          }
        break;
      }
      case Op::ScaleRows: {
        const Tensor& vs = nodes_[n.b].value;
        Tensor& ga = grad_buf(n.a);
        Tensor& gs = grad_buf(n.b);
        for (std::size_t i2 = 0; i2 < g.rows(); ++i2)
          for (std::size_t j = 0; j < g.cols(); ++j) {
            ga.at(i2, j) += g.at(i2, j) * vs.data[i2];
            gs.data[i2] += g.at(i2, j) * va.at(i2, j);
          }
        break;
      }
      case Op::SoftmaxRows: {
        const Tensor& p = n.value;
        Tensor& ga = grad_buf(n.a);
        std::size_t r = p.rank() == 1 ? 1 : p.rows();
        std::size_t c = p.rank() == 1 ? p.size() : p.cols();
        for (std::size_t i2 = 0; i2 < r; ++i2) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j)
            dot += g.data[i2 * c + j] * p.data[i2 * c + j];
          for (std::size_t j = 0; j < c; ++j)
            ga.data[i2 * c + j] += p.data[i2 * c + j] * (g.data[i2 * c + j] - dot);
        }
        break;
      }
      case Op::Sigmoid:
      case Op::Tanh:
      case Op::Relu:
      case Op::Softplus:
      case Op::Exp:
      case Op::Log:
      case Op::Sqrt:
      case Op::Clamp:
      case Op::Scale:
      case Op::AddScalar: {
        Tensor& ga = grad_buf(n.a);
        for (std::size_t k = 0; k < g.size(); ++k)
          ga.data[k] += unary_dx(n.op, va.data[k], n.value.data[k], g.data[k], n.p0, n.p1);
        break;
      }
      case Op::Leaf:
        break;
    }
  }
}

namespace {

void require_same_tape(Var a, Var b, Op op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument(std::string(op_name(op)) + ": operands on different tapes");
  }
}

Var elementwise_binary(Op op, Var a, Var b) {
  require_same_tape(a, b, op);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (!va.same_shape(vb)) shape_error(op, va, vb);
  Tape::Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  n.value = Tensor(va.shape);
  for (std::size_t k = 0; k < va.size(); ++k) {
    double x = va.data[k], y = vb.data[k];
    switch (op) {
      case Op::Add: n.value.data[k] = x + y; break;
      case Op::Sub: n.value.data[k] = x - y; break;
      case Op::Mul: n.value.data[k] = x * y; break;
      case Op::Div: n.value.data[k] = x / y; break;
      default: throw std::logic_error("elementwise_binary: bad op");
    }
  }
  return a.tape->emit(std::move(n));
}

Var elementwise_unary(Op op, Var a, double p0 = 0.0, double p1 = 0.0) {
  const Tensor& va = a.value();
  Tape::Node n;
  n.op = op;
  n.a = a.id;
  n.p0 = p0;
  n.p1 = p1;
  n.value = Tensor(va.shape);
  for (std::size_t k = 0; k < va.size(); ++k) {
    double x = va.data[k];
    double y = 0.0;
    switch (op) {
      case Op::Sigmoid: y = sigmoid_scalar(x); break;
      case Op::Tanh: y = std::tanh(x); break;
      case Op::Relu: y = x > 0.0 ? x : 0.0; break;
      case Op::Softplus: y = softplus_scalar(x); break;
      case Op::Exp: y = std::exp(x); break;
      case Op::Log: y = std::log(x); break;
      case Op::Sqrt: y = std::sqrt(x); break;
      case Op::Clamp: y = x < p0 ? p0 : (x > p1 ? p1 : x); break;
      case Op::Scale: y = x * p0; break;
      case Op::AddScalar: y = x + p0; break;
      default: throw std::logic_error("elementwise_unary: bad op");
    }
    n.value.data[k] = y;
  }
  return a.tape->emit(std::move(n));
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b, Op::MatMul);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  require_2d(Op::MatMul, va);
  require_2d(Op::MatMul, vb);
  if (va.cols() != vb.rows()) shape_error(Op::MatMul, va, vb);
  Tape::Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.value = Tensor({va.rows(), vb.cols()});
  as_mat(n.value).noalias() = as_mat(va) * as_mat(vb);
  return a.tape->emit(std::move(n));
}

Var add(Var a, Var b) { return elementwise_binary(Op::Add, a, b); }
Var sub(Var a, Var b) { return elementwise_binary(Op::Sub, a, b); }
Var mul(Var a, Var b) { return elementwise_binary(Op::Mul, a, b); }
Var div(Var a, Var b) { return elementwise_binary(Op::Div, a, b); }
Var scale(Var a, double c) { return elementwise_unary(Op::Scale, a, c); }
Var add_scalar(Var a, double c) { return elementwise_unary(Op::AddScalar, a, c); }
Var sigmoid(Var a) { return elementwise_unary(Op::Sigmoid, a); }
Var tanh(Var a) { return elementwise_unary(Op::Tanh, a); }
Var relu(Var a) { return elementwise_unary(Op::Relu, a); }
Var softplus(Var a) { return elementwise_unary(Op::Softplus, a); }
Var exp(Var a) { return elementwise_unary(Op::Exp, a); }
Var log(Var a) { return elementwise_unary(Op::Log, a); }
Var sqrt(Var a) { return elementwise_unary(Op::Sqrt, a); }
Var clamp(Var a, double lo, double hi) { return elementwise_unary(Op::Clamp, a, lo, hi); }

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b, Op::ConcatCols);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  require_2d(Op::ConcatCols, va);
  require_2d(Op::ConcatCols, vb);
  if (va.rows() != vb.rows()) shape_error(Op::ConcatCols, va, vb);
  Tape::Node n;
  n.op = Op::ConcatCols;
  n.a = a.id;
  n.b = b.id;
  n.value = Tensor({va.rows(), va.cols() + vb.cols()});
  for (std::size_t i = 0; i < va.rows(); ++i) {
    for (std::size_t j = 0; j < va.cols(); ++j) n.value.at(i, j) = va.at(i, j);
    for (std::size_t j = 0; j < vb.cols(); ++j) n.value.at(i, va.cols() + j) = vb.at(i, j);
  }
  return a.tape->emit(std::move(n));
}

Var slice_cols(Var a, std::size_t lo, std::size_t hi) {
  const Tensor& va = a.value();
  require_2d(Op::SliceCols, va);
  if (lo >= hi || hi > va.cols()) {
    shape_error(Op::SliceCols, va,
                "bad column range [" + std::to_string(lo) + "," + std::to_string(hi) + ")");
  }
  Tape::Node n;
  n.op = Op::SliceCols;
  n.a = a.id;
  n.p0 = static_cast<double>(lo);
  n.p1 = static_cast<double>(hi);
  n.value = Tensor({va.rows(), hi - lo});
  for (std::size_t i = 0; i < va.rows(); ++i)
    for (std::size_t j = lo; j < hi; ++j) n.value.at(i, j - lo) = va.at(i, j);
  return a.tape->emit(std::move(n));
}

Var slice_rows(Var a, std::size_t lo, std::size_t hi) {
  const Tensor& va = a.value();
  require_2d(Op::SliceRows, va);
  if (lo >= hi || hi > va.rows()) {
    shape_error(Op::SliceRows, va,
                "bad row range [" + std::to_string(lo) + "," + std::to_string(hi) + ")");
  }
  Tape::Node n;
  n.op = Op::SliceRows;
  n.a = a.id;
  n.p0 = static_cast<double>(lo);
  n.p1 = static_cast<double>(hi);
  n.value = Tensor({hi - lo, va.cols()});
  for (std::size_t i = lo; i < hi; ++i)
    for (std::size_t j = 0; j < va.cols(); ++j) n.value.at(i - lo, j) = va.at(i, j);
  return a.tape->emit(std::move(n));
}

Var reshape(Var a, Shape s) {
  const Tensor& va = a.value();
  if (numel(s) != va.size()) shape_error(Op::Reshape, va, "target " + shape_str(s));
  Tape::Node n;
  n.op = Op::Reshape;
  n.a = a.id;
  n.value = Tensor(std::move(s), va.data);
  return a.tape->emit(std::move(n));
}

Var sum(Var a) {
  const Tensor& va = a.value();
  double s = 0.0;
  for (double x : va.data) s += x;
  Tape::Node n;
  n.op = Op::Sum;
  n.a = a.id;
  n.value = Tensor::scalar(s);
  return a.tape->emit(std::move(n));
}

Var mean(Var a) {
  const Tensor& va = a.value();
  if (va.size() == 0) shape_error(Op::Mean, va, "empty tensor");
  double s = 0.0;
  for (double x : va.data) s += x;
  Tape::Node n;
  n.op = Op::Mean;
  n.a = a.id;
  n.value = Tensor::scalar(s / static_cast<double>(va.size()));
  return a.tape->emit(std::move(n));
}

Var row_sum(Var a) {
  const Tensor& va = a.value();
  require_2d(Op::RowSum, va);
  Tape::Node n;
  n.op = Op::RowSum;
  n.a = a.id;
  n.value = Tensor({va.rows()});
  for (std::size_t i = 0; i < va.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < va.cols(); ++j) s += va.at(i, j);
    n.value.data[i] = s;
  }
  return a.tape->emit(std::move(n));
}

Var add_row_vector(Var m, Var v) {
  require_same_tape(m, v, Op::AddRowVector);
  const Tensor& vm = m.value();
  const Tensor& vv = v.value();
  require_2d(Op::AddRowVector, vm);
  if (vv.size() != vm.cols()) shape_error(Op::AddRowVector, vm, vv);
  Tape::Node n;
  n.op = Op::AddRowVector;
  n.a = m.id;
  n.b = v.id;
  n.value = Tensor(vm.shape);
  for (std::size_t i = 0; i < vm.rows(); ++i)
    for (std::size_t j = 0; j < vm.cols(); ++j) n.value.at(i, j) = vm.at(i, j) + vv.data[j];
  return m.tape->emit(std::move(n));
}

Var scale_rows(Var m, Var s) {
  require_same_tape(m, s, Op::ScaleRows);
  const Tensor& vm = m.value();
  const Tensor& vs = s.value();
  require_2d(Op::ScaleRows, vm);
  if (vs.size() != vm.rows()) shape_error(Op::ScaleRows, vm, vs);
  Tape::Node n;
  n.op = Op::ScaleRows;
  n.a = m.id;
  n.b = s.id;
  n.value = Tensor(vm.shape);
  for (std::size_t i = 0; i < vm.rows(); ++i)
    for (std::size_t j = 0; j < vm.cols(); ++j) n.value.at(i, j) = vm.at(i, j) * vs.data[i];
  return m.tape->emit(std::move(n));
}

Tensor softmax_rows(const Tensor& t) {
  if (t.rank() == 0 || t.shape.back() == 0) {
    throw std::invalid_argument("softmax_rows: empty last axis, shape " + shape_str(t.shape));
  }
  std::size_t c = t.shape.back();
  std::size_t r = t.size() / c;
  Tensor out(t.shape);
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = t.data.data() + i * c;
    double* y = out.data.data() + i * c;
    double m = x[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - m);
      s += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[j] /= s;
  }
  return out;
}

Var softmax_rows(Var a) {
  const Tensor& va = a.value();
  if (va.rank() > 2) shape_error(Op::SoftmaxRows, va, "expected rank 1 or 2");
  Tape::Node n;
  n.op = Op::SoftmaxRows;
  n.a = a.id;
  n.value = softmax_rows(va);
  return a.tape->emit(std::move(n));
}

}  // namespace perdpm
