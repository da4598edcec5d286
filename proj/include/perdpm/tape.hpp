#pragma once

#include <cstdint>
#include <vector>

#include "perdpm/tensor.hpp"

namespace perdpm {

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  Scale,      // a * p0
  AddScalar,  // a + p0
  ConcatCols,
  SliceCols,  // columns [p0, p1)
  SliceRows,  // rows [p0, p1)
  Reshape,
  Sum,
  Mean,
  RowSum,
  AddRowVector,  // [r,c] + broadcast [c]
  ScaleRows,     // [r,c] * broadcast [r]
  Sigmoid,
  Tanh,
  Relu,
  Softplus,
  Exp,
  Log,
  Sqrt,
  SoftmaxRows,
  Clamp,  // clamp to [p0, p1]; zero gradient outside
};

const char* op_name(Op op);

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward() replays them once in reverse.
class Tape {
 public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  Var leaf(Tensor value);
  Var constant(Tensor value) { return leaf(std::move(value)); }

  // Accumulates gradients of `loss` (a scalar node) w.r.t. every node.
  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  // Zero tensor if the node did not contribute to the last backward pass.
  const Tensor& grad(Var v);

  std::size_t size() const { return nodes_.size(); }

  struct Node {
    Tensor value;
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    double p0 = 0.0;
    double p1 = 0.0;
  };

  Var emit(Node node);

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool check_finite_;

  Tensor& grad_buf(int id);
};

// Primitive builders. Elementwise binary ops require identical shapes;
// shape violations throw std::invalid_argument naming the op and shapes.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t lo, std::size_t hi);
Var slice_rows(Var a, std::size_t lo, std::size_t hi);
Var reshape(Var a, Shape s);
Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
Var add_row_vector(Var m, Var v);
Var scale_rows(Var m, Var s);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var softmax_rows(Var a);
Var clamp(Var a, double lo, double hi);

inline Var square(Var a) { return mul(a, a); }

// Stable scalar helpers shared by forward kernels and plain-tensor code.
double sigmoid_scalar(double x);
double softplus_scalar(double x);

// Row-wise softmax on a plain tensor (last axis), max-subtracted.
Tensor softmax_rows(const Tensor& t);

}  // namespace perdpm
