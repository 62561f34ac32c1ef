#include "flare/graph.hpp"

#include <cmath>

#include "flare/error.hpp"

namespace flare {

namespace {

// Guard threshold for zero rows ahead of unit normalization.
constexpr double kUnitRowEps = 1e-12;
// Tolerance for the symmetry precondition of reg_inverse.
constexpr double kSymTol = 1e-9;

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Lower Cholesky of a symmetric positive definite matrix, in place.
// Returns -1 on success, else the index of the first non-positive pivot.
int cholesky_lower(Matrix& a) {
  const int n = static_cast<int>(a.rows());
  for (int j = 0; j < n; ++j) {
    double d = a(j, j) - a.row(j).head(j).squaredNorm();
    if (!(d > 0.0) || !std::isfinite(d)) return j;
    d = std::sqrt(d);
    a(j, j) = d;
    for (int i = j + 1; i < n; ++i) {
      a(i, j) = (a(i, j) - a.row(i).head(j).dot(a.row(j).head(j))) / d;
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) a(i, j) = 0.0;
  return -1;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Parameter: return "parameter";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddRow: return "add_row";
    case Op::Relu: return "relu";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::Square: return "square";
    case Op::UnitRows: return "unit_rows";
    case Op::Trace: return "trace";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SqDist: return "sqdist";
    case Op::RegInverse: return "reg_inverse";
  }
  return "?";
}

const Graph::Node& Graph::at(Var v) const {
  if (v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size())
    throw ContractError("Graph: invalid node handle");
  return nodes_[v.id];
}

Graph::Node& Graph::at(Var v) {
  return const_cast<Node&>(static_cast<const Graph*>(this)->at(v));
}

Var Graph::push(Node n) {
  if (!n.value.allFinite())
    throw NumericError(std::string(op_name(n.op)) +
                       ": non-finite entries in result" +
                       (n.name.empty() ? "" : " (" + n.name + ")"));
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Matrix v, std::string name) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(v);
  n.name = std::move(name);
  return push(std::move(n));
}

Var Graph::parameter(Matrix v, std::string name) {
  Node n;
  n.op = Op::Parameter;
  n.value = std::move(v);
  n.requires_grad = true;
  n.name = std::move(name);
  return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  if (na.value.cols() != nb.value.rows())
    throw ShapeError("matmul: inner dimensions differ, " +
                     shape_str(na.value) + " * " + shape_str(nb.value));
  Node n;
  n.op = Op::MatMul;
  n.in = {a.id, b.id};
  n.value = na.value * nb.value;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Graph::transpose(Var a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Transpose;
  n.in = {a.id, -1};
  n.value = na.value.transpose();
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols())
    throw ShapeError("add: shapes differ, " + shape_str(na.value) + " vs " +
                     shape_str(nb.value));
  Node n;
  n.op = Op::Add;
  n.in = {a.id, b.id};
  n.value = na.value + nb.value;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols())
    throw ShapeError("sub: shapes differ, " + shape_str(na.value) + " vs " +
                     shape_str(nb.value));
  Node n;
  n.op = Op::Sub;
  n.in = {a.id, b.id};
  n.value = na.value - nb.value;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols())
    throw ShapeError("mul: shapes differ, " + shape_str(na.value) + " vs " +
                     shape_str(nb.value));
  Node n;
  n.op = Op::Mul;
  n.in = {a.id, b.id};
  n.value = na.value.cwiseProduct(nb.value);
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Graph::scale(Var a, double s) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Scale;
  n.in = {a.id, -1};
  n.scalar = s;
  n.value = s * na.value;
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::add_row(Var a, Var row) {
  const Node& na = at(a);
  const Node& nr = at(row);
  if (nr.value.rows() != 1 || nr.value.cols() != na.value.cols())
    throw ShapeError("add_row: expected 1x" + std::to_string(na.value.cols()) +
                     " row vector, got " + shape_str(nr.value));
  Node n;
  n.op = Op::AddRow;
  n.in = {a.id, row.id};
  n.value = na.value.rowwise() + nr.value.row(0);
  n.requires_grad = na.requires_grad || nr.requires_grad;
  return push(std::move(n));
}

Var Graph::relu(Var a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Relu;
  n.in = {a.id, -1};
  n.value = na.value.cwiseMax(0.0);
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::softmax_rows(Var a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::SoftmaxRows;
  n.in = {a.id, -1};
  n.value = na.value;
  for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
    auto row = n.value.row(i);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::log(Var a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Log;
  n.in = {a.id, -1};
  n.value = na.value.array().log();
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::exp(Var a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Exp;
  n.in = {a.id, -1};
  n.value = na.value.array().exp();
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::square(Var a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Square;
  n.in = {a.id, -1};
  n.value = na.value.array().square();
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::unit_rows(Var a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::UnitRows;
  n.in = {a.id, -1};
  n.value = na.value;
  n.row_norms.resize(na.value.rows());
  n.guarded.assign(na.value.rows(), 0);
  for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
    double norm = n.value.row(i).norm();
    n.row_norms[i] = norm;
    if (norm < kUnitRowEps) {
      n.value.row(i).setZero();
      n.value(i, 0) = 1.0;
      n.guarded[i] = 1;
      ++guard_events_;
    } else {
      n.value.row(i) /= norm;
    }
  }
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::trace(Var a) {
  const Node& na = at(a);
  if (na.value.rows() != na.value.cols())
    throw ShapeError("trace: matrix not square, " + shape_str(na.value));
  Node n;
  n.op = Op::Trace;
  n.in = {a.id, -1};
  n.value = Matrix::Constant(1, 1, na.value.trace());
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::sum(Var a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Sum;
  n.in = {a.id, -1};
  n.value = Matrix::Constant(1, 1, na.value.sum());
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::mean(Var a) {
  const Node& na = at(a);
  if (na.value.size() == 0) throw ShapeError("mean: empty matrix");
  Node n;
  n.op = Op::Mean;
  n.in = {a.id, -1};
  n.value = Matrix::Constant(1, 1, na.value.mean());
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Graph::sqdist(Var a, Var b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  if (na.value.cols() != nb.value.cols())
    throw ShapeError("sqdist: feature widths differ, " + shape_str(na.value) +
                     " vs " + shape_str(nb.value));
  Node n;
  n.op = Op::SqDist;
  n.in = {a.id, b.id};
  Eigen::VectorXd an = na.value.rowwise().squaredNorm();
  Eigen::VectorXd bn = nb.value.rowwise().squaredNorm();
  n.value = (-2.0 * na.value * nb.value.transpose());
  n.value.colwise() += an;
  n.value.rowwise() += bn.transpose();
  n.value = n.value.cwiseMax(0.0);  // clip the roundoff negatives
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Graph::reg_inverse(Var k, double tau) {
  const Node& nk = at(k);
  const Matrix& K = nk.value;
  if (K.rows() != K.cols())
    throw ShapeError("reg_inverse: matrix not square, " + shape_str(K));
  if (tau < 0.0) throw ContractError("reg_inverse: tau must be >= 0");
  double asym = (K - K.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymTol)
    throw ContractError("reg_inverse: matrix asymmetric beyond tolerance (" +
                        std::to_string(asym) + ")");
  Matrix fac = 0.5 * (K + K.transpose());
  fac.diagonal().array() += tau;
  int bad = cholesky_lower(fac);
  if (bad >= 0)
    throw SingularMatrixError(
        "reg_inverse: factorization failed at leading minor " +
            std::to_string(bad),
        bad);
  // Solve L L^T X = I; the explicit inverse is reused by downstream traces.
  Matrix inv = Matrix::Identity(K.rows(), K.cols());
  fac.triangularView<Eigen::Lower>().solveInPlace(inv);
  fac.triangularView<Eigen::Lower>().transpose().solveInPlace(inv);
  Node n;
  n.op = Op::RegInverse;
  n.in = {k.id, -1};
  n.scalar = tau;
  n.value = std::move(inv);
  n.requires_grad = nk.requires_grad;
  return push(std::move(n));
}

void Graph::accumulate(int32_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Graph::adjoint(int32_t id) {
  Node& n = nodes_[id];
  const Matrix& g = n.grad;
  const int32_t a = n.in[0];
  const int32_t b = n.in[1];
  switch (n.op) {
    case Op::Constant:
    case Op::Parameter:
      break;
    case Op::MatMul:
      accumulate(a, g * nodes_[b].value.transpose());
      accumulate(b, nodes_[a].value.transpose() * g);
      break;
    case Op::Transpose:
      accumulate(a, g.transpose());
      break;
    case Op::Add:
      accumulate(a, g);
      accumulate(b, g);
      break;
    case Op::Sub:
      accumulate(a, g);
      accumulate(b, -g);
      break;
    case Op::Mul:
      accumulate(a, g.cwiseProduct(nodes_[b].value));
      accumulate(b, g.cwiseProduct(nodes_[a].value));
      break;
    case Op::Scale:
      accumulate(a, n.scalar * g);
      break;
    case Op::AddRow:
      accumulate(a, g);
      accumulate(b, g.colwise().sum());
      break;
    case Op::Relu:
      accumulate(
          a, (nodes_[a].value.array() > 0.0).cast<double>().matrix().cwiseProduct(g));
      break;
    case Op::SoftmaxRows: {
      const Matrix& y = n.value;
      Matrix gx(y.rows(), y.cols());
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        double dot = y.row(i).dot(g.row(i));
        gx.row(i) = y.row(i).cwiseProduct(g.row(i).array().matrix()) - dot * y.row(i);
      }
      accumulate(a, gx);
      break;
    }
    case Op::Log:
      accumulate(a, g.cwiseQuotient(nodes_[a].value));
      break;
    case Op::Exp:
      accumulate(a, g.cwiseProduct(n.value));
      break;
    case Op::Square:
      accumulate(a, 2.0 * g.cwiseProduct(nodes_[a].value));
      break;
    case Op::UnitRows: {
      const Matrix& y = n.value;
      Matrix gx = Matrix::Zero(y.rows(), y.cols());
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        if (n.guarded[i]) continue;  // guard output is constant
        double dot = y.row(i).dot(g.row(i));
        gx.row(i) = (g.row(i) - dot * y.row(i)) / n.row_norms[i];
      }
      accumulate(a, gx);
      break;
    }
    case Op::Trace: {
      const Matrix& x = nodes_[a].value;
      accumulate(a, g(0, 0) * Matrix::Identity(x.rows(), x.cols()));
      break;
    }
    case Op::Sum: {
      const Matrix& x = nodes_[a].value;
      accumulate(a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
      break;
    }
    case Op::Mean: {
      const Matrix& x = nodes_[a].value;
      accumulate(
          a, Matrix::Constant(x.rows(), x.cols(), g(0, 0) / double(x.size())));
      break;
    }
    case Op::SqDist: {
      const Matrix& A = nodes_[a].value;
      const Matrix& B = nodes_[b].value;
      Eigen::VectorXd rs = g.rowwise().sum();
      Eigen::VectorXd cs = g.colwise().sum();
      accumulate(a, 2.0 * (rs.asDiagonal() * A - g * B));
      accumulate(b, 2.0 * (cs.asDiagonal() * B - g.transpose() * A));
      break;
    }
    case Op::RegInverse: {
      const Matrix& y = n.value;  // symmetric
      accumulate(a, (-y * g * y).eval());
      break;
    }
  }
}

void Graph::backward(Var loss) {
  const Node& top = at(loss);
  if (top.value.rows() != 1 || top.value.cols() != 1)
    throw ShapeError("backward: loss must be 1x1, got " +
                     shape_str(top.value));
  if (!top.requires_grad) return;  // nothing trainable feeds the loss
  accumulate(loss.id, Matrix::Constant(1, 1, 1.0));
  for (int32_t i = loss.id; i >= 0; --i) {
    if (nodes_[i].has_grad && nodes_[i].requires_grad) adjoint(i);
  }
}

void Graph::zero_grad() {
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
}

const Matrix& Graph::value(Var v) const { return at(v).value; }

bool Graph::has_grad(Var v) const { return at(v).has_grad; }

const Matrix& Graph::grad(Var v) const {
  const Node& n = at(v);
  if (!n.has_grad)
    throw ContractError("Graph::grad: node has no gradient (run backward; "
                        "node must influence the loss)");
  return n.grad;
}

double Graph::scalar_value(Var v) const {
  const Matrix& m = at(v).value;
  if (m.rows() != 1 || m.cols() != 1)
    throw ShapeError("scalar_value: node is " + shape_str(m) + ", not 1x1");
  return m(0, 0);
}

Op Graph::op(Var v) const { return at(v).op; }

const std::string& Graph::name(Var v) const { return at(v).name; }

}  // namespace flare
