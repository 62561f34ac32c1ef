#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace flare {

using Matrix = Eigen::MatrixXd;

// Handle into a Graph.  Cheap to copy; only valid for the graph that made it.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

enum class Op : uint8_t {
  Constant,
  Parameter,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,         // elementwise
  Scale,       // by a compile-time constant scalar
  AddRow,      // broadcast a 1 x c row vector over an n x c matrix
  Relu,
  SoftmaxRows,
  Log,
  Exp,
  Square,
  UnitRows,    // L2-normalize each row onto the unit sphere
  Trace,
  Sum,
  Mean,
  SqDist,      // pairwise squared Euclidean distances between row sets
  RegInverse,  // (K + tau*I)^-1 via symmetric factorization
};

const char* op_name(Op op);

// Eagerly evaluated tape of matrix operations with reverse-mode adjoints.
// Values are computed at node creation; backward() walks the tape in reverse
// creation order and accumulates gradients into every node that needs one.
// Graphs are cheap and meant to be rebuilt per training step.
class Graph {
 public:
  Var constant(Matrix v, std::string name = {});
  Var parameter(Matrix v, std::string name = {});

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_row(Var a, Var row);
  Var relu(Var a);
  Var softmax_rows(Var a);
  Var log(Var a);
  Var exp(Var a);
  Var square(Var a);
  Var unit_rows(Var a);
  Var trace(Var a);
  Var sum(Var a);
  Var mean(Var a);
  Var sqdist(Var a, Var b);
  Var reg_inverse(Var k, double tau);

  // Seeds d(loss)/d(loss) = 1 and propagates.  `loss` must be 1 x 1.
  void backward(Var loss);
  void zero_grad();

  const Matrix& value(Var v) const;
  bool has_grad(Var v) const;
  const Matrix& grad(Var v) const;

  double scalar_value(Var v) const;  // value of a 1 x 1 node

  // Rows that hit the zero-norm guard in unit_rows since construction.
  int guard_events() const { return guard_events_; }

  size_t size() const { return nodes_.size(); }
  Op op(Var v) const;
  const std::string& name(Var v) const;

 private:
  struct Node {
    Op op;
    std::array<int32_t, 2> in{-1, -1};
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    double scalar = 0.0;          // Scale factor or RegInverse tau
    Eigen::VectorXd row_norms;    // UnitRows cache
    std::vector<uint8_t> guarded; // UnitRows rows replaced by the guard
    std::string name;
  };

  Var push(Node n);
  const Node& at(Var v) const;
  Node& at(Var v);
  void accumulate(int32_t id, const Matrix& g);
  void adjoint(int32_t id);

  std::vector<Node> nodes_;
  int guard_events_ = 0;
};

}  // namespace flare
