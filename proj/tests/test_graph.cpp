#include <doctest.h>

#include <cmath>

#include "flare/error.hpp"
#include "flare/gradcheck.hpp"
#include "flare/graph.hpp"
#include "flare/rng.hpp"

using namespace flare;

namespace {

Matrix random_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// Random symmetric positive definite matrix.
Matrix random_spd(Rng& rng, int n) {
  Matrix a = random_matrix(rng, n, n);
  return a * a.transpose() + 0.5 * Matrix::Identity(n, n);
}

double check_op(const std::vector<Matrix>& params,
                const std::function<Var(Graph&, const std::vector<Var>&)>& f) {
  std::vector<std::string> names;
  for (size_t i = 0; i < params.size(); ++i)
    names.push_back("p" + std::to_string(i));
  return grad_check(params, names, f).max_rel_err;
}

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("forward values of the basic primitives") {
  Graph g;
  Matrix a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  Var va = g.constant(a), vb = g.constant(b);

  Matrix mm = g.value(g.matmul(va, vb));
  CHECK(mm(0, 0) == doctest::Approx(19));
  CHECK(mm(1, 1) == doctest::Approx(50));
  CHECK(g.value(g.transpose(va))(0, 1) == doctest::Approx(3));
  CHECK(g.value(g.add(va, vb))(0, 0) == doctest::Approx(6));
  CHECK(g.value(g.sub(va, vb))(0, 0) == doctest::Approx(-4));
  CHECK(g.value(g.mul(va, vb))(1, 0) == doctest::Approx(21));
  CHECK(g.value(g.scale(va, -2.0))(1, 1) == doctest::Approx(-8));
  CHECK(g.scalar_value(g.trace(va)) == doctest::Approx(5));
  CHECK(g.scalar_value(g.sum(va)) == doctest::Approx(10));
  CHECK(g.scalar_value(g.mean(va)) == doctest::Approx(2.5));

  Matrix neg(1, 3);
  neg << -1, 0, 2;
  CHECK(g.value(g.relu(g.constant(neg)))(0, 0) == 0.0);
  CHECK(g.value(g.relu(g.constant(neg)))(0, 2) == 2.0);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Graph g;
  Matrix x(2, 3);
  x << 1, 2, 3, 1000, 1001, 1002;  // the second row probes overflow handling
  Matrix p = g.value(g.softmax_rows(g.constant(x)));
  for (int i = 0; i < 2; ++i) {
    CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.row(i).minCoeff() > 0.0);
  }
  CHECK(p(0, 0) == doctest::Approx(p(1, 0)).epsilon(1e-12));
}

TEST_CASE("unit_rows normalizes and guards zero rows") {
  Graph g;
  Matrix x(3, 4);
  x << 3, 4, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1;
  Var v = g.unit_rows(g.constant(x));
  const Matrix& y = g.value(v);
  CHECK(y.row(0).norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y(0, 0) == doctest::Approx(0.6));
  // Zero row maps onto the first basis vector and the event is flagged.
  CHECK(y(1, 0) == 1.0);
  CHECK(y.row(1).norm() == doctest::Approx(1.0));
  CHECK(g.guard_events() == 1);
  CHECK(y.row(2).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pairwise squared distances match the direct loop") {
  Rng rng(11);
  Matrix a = random_matrix(rng, 4, 3);
  Matrix b = random_matrix(rng, 5, 3);
  Graph g;
  Matrix d = g.value(g.sqdist(g.constant(a), g.constant(b)));
  REQUIRE(d.rows() == 4);
  REQUIRE(d.cols() == 5);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(d(i, j) ==
            doctest::Approx((a.row(i) - b.row(j)).squaredNorm()).epsilon(1e-10));
}

TEST_CASE("reg_inverse really inverts K + tau I") {
  Rng rng(7);
  Matrix k = random_spd(rng, 6);
  double tau = 1e-3;
  Graph g;
  Matrix inv = g.value(g.reg_inverse(g.constant(k), tau));
  Matrix shifted = k;
  shifted.diagonal().array() += tau;
  CHECK((inv * shifted - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("reg_inverse rejects bad inputs with structured errors") {
  Graph g;
  Matrix asym(2, 2);
  asym << 1, 2, 0, 1;
  CHECK_THROWS_AS(g.reg_inverse(g.constant(asym), 0.1), ContractError);

  Matrix indef(2, 2);
  indef << 1, 0, 0, -5;
  try {
    g.reg_inverse(g.constant(indef), 0.0);
    FAIL("expected SingularMatrixError");
  } catch (const SingularMatrixError& e) {
    CHECK(e.minor_index == 1);
  }

  Matrix rect(2, 3);
  rect.setZero();
  CHECK_THROWS_AS(g.reg_inverse(g.constant(rect), 0.1), ShapeError);
}

TEST_CASE("shape mismatches raise ShapeError naming both operands") {
  Graph g;
  Var a = g.constant(Matrix::Zero(2, 3));
  Var b = g.constant(Matrix::Zero(2, 3));
  CHECK_THROWS_AS(g.matmul(a, b), ShapeError);
  CHECK_THROWS_AS(g.trace(a), ShapeError);
  CHECK_THROWS_AS(g.add_row(a, b), ShapeError);
  try {
    g.matmul(a, b);
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("matmul") != std::string::npos);
  }
}

TEST_CASE("non-finite results raise NumericError naming the op") {
  Graph g;
  Matrix z = Matrix::Zero(1, 1);
  CHECK_THROWS_AS(g.log(g.constant(z)), NumericError);
  Matrix big = Matrix::Constant(1, 1, 1e308);
  CHECK_THROWS_AS(g.exp(g.constant(big)), NumericError);
}

TEST_CASE("backward on w*x + b quadratic gives exact analytic gradient") {
  // loss = sum((W x - y)^2); dL/dW = 2 (W x - y) x^T, hand-checkable.
  Graph g;
  Matrix W(2, 2), x(2, 1), y(2, 1);
  W << 1, 0, 0, 1;
  x << 1, 2;
  y << 0, 0;
  Var vw = g.parameter(W, "W");
  Var loss = g.sum(g.square(g.sub(g.matmul(vw, g.constant(x)), g.constant(y))));
  g.backward(loss);
  Matrix expected = 2.0 * (W * x - y) * x.transpose();
  CHECK((g.grad(vw) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradient of sum((K+tau I)^-1) at K = I, tau = 1 is -J/4") {
  Graph g;
  Var k = g.parameter(Matrix::Identity(2, 2), "K");
  Var loss = g.sum(g.reg_inverse(k, 1.0));
  g.backward(loss);
  CHECK((g.grad(k) - Matrix::Constant(2, 2, -0.25)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("gradient accumulates when a node is used twice") {
  // loss = sum(a * a) has gradient 2a through the two mul slots.
  Graph g;
  Matrix a(2, 2);
  a << 1, -2, 3, 0.5;
  Var va = g.parameter(a, "a");
  Var loss = g.sum(g.mul(va, va));
  g.backward(loss);
  CHECK((g.grad(va) - 2.0 * a).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("every primitive adjoint matches central finite differences") {
  Rng rng(42);
  GradCheckOptions tight;  // smooth ops; expect ~1e-8 or better

  SUBCASE("matmul") {
    std::vector<Matrix> p{random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)};
    double e = check_op(p, [](Graph& g, const std::vector<Var>& v) {
      return g.sum(g.square(g.matmul(v[0], v[1])));
    });
    CHECK(e < 1e-6);
  }
  SUBCASE("transpose, add, sub, mul, scale") {
    std::vector<Matrix> p{random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)};
    double e = check_op(p, [](Graph& g, const std::vector<Var>& v) {
      Var t = g.transpose(v[0]);
      Var s = g.sub(g.add(t, v[1]), g.scale(v[0], 0.3));
      return g.sum(g.square(g.mul(s, v[1])));
    });
    CHECK(e < 1e-6);
  }
  SUBCASE("add_row") {
    std::vector<Matrix> p{random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)};
    double e = check_op(p, [](Graph& g, const std::vector<Var>& v) {
      return g.sum(g.square(g.add_row(v[0], v[1])));
    });
    CHECK(e < 1e-6);
  }
  SUBCASE("relu") {
    // Keep entries away from the kink where the subgradient is one-sided.
    Matrix m = random_matrix(rng, 4, 4);
    for (int i = 0; i < 16; ++i)
      if (std::abs(m(i / 4, i % 4)) < 1e-3) m(i / 4, i % 4) = 0.5;
    double e = check_op({m}, [](Graph& g, const std::vector<Var>& v) {
      return g.sum(g.square(g.relu(v[0])));
    });
    CHECK(e < 1e-6);
  }
  SUBCASE("softmax_rows") {
    std::vector<Matrix> p{random_matrix(rng, 3, 5)};
    double e = check_op(p, [](Graph& g, const std::vector<Var>& v) {
      Var sm = g.softmax_rows(v[0]);
      return g.sum(g.mul(sm, g.log(sm)));
    });
    CHECK(e < 1e-4);
  }
  SUBCASE("log and exp") {
    Matrix m = random_matrix(rng, 3, 3, 0.5);
    double e = check_op({m}, [](Graph& g, const std::vector<Var>& v) {
      return g.sum(g.log(g.exp(v[0])));
    });
    CHECK(e < 1e-6);
  }
  SUBCASE("square, trace, mean") {
    std::vector<Matrix> p{random_matrix(rng, 4, 4)};
    double e = check_op(p, [](Graph& g, const std::vector<Var>& v) {
      return g.add(g.trace(g.square(v[0])), g.mean(g.square(v[0])));
    });
    CHECK(e < 1e-6);
  }
  SUBCASE("unit_rows") {
    Matrix m = random_matrix(rng, 4, 5);
    m.array() += 2.0;  // keep rows well off the guard threshold
    double e = check_op({m}, [](Graph& g, const std::vector<Var>& v) {
      Var z = g.unit_rows(v[0]);
      return g.sum(g.square(z));
    });
    CHECK(e < 1e-6);
    // ...and through a non-trivial downstream expression.
    Matrix w = random_matrix(rng, 5, 2);
    double e2 = check_op({m, w}, [](Graph& g, const std::vector<Var>& v) {
      return g.sum(g.square(g.matmul(g.unit_rows(v[0]), v[1])));
    });
    CHECK(e2 < 1e-6);
  }
  SUBCASE("sqdist") {
    std::vector<Matrix> p{random_matrix(rng, 4, 3), random_matrix(rng, 5, 3)};
    double e = check_op(p, [](Graph& g, const std::vector<Var>& v) {
      return g.sum(g.square(g.sqdist(v[0], v[1])));
    });
    CHECK(e < 1e-6);
    // Same node on both sides: gradients must accumulate across both slots.
    double e2 = check_op({p[0]}, [](Graph& g, const std::vector<Var>& v) {
      return g.sum(g.square(g.sqdist(v[0], v[0])));
    });
    CHECK(e2 < 1e-6);
  }
  SUBCASE("sqdist feeding an rbf kernel") {
    std::vector<Matrix> p{random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)};
    double e = check_op(p, [](Graph& g, const std::vector<Var>& v) {
      Var k = g.exp(g.scale(g.sqdist(v[0], v[1]), -0.5));
      return g.sum(g.square(k));
    });
    CHECK(e < 1e-6);
  }
  SUBCASE("reg_inverse") {
    Matrix k = random_spd(rng, 5);
    double e = check_op({k}, [](Graph& g, const std::vector<Var>& v) {
      Var sym = g.scale(g.add(v[0], g.transpose(v[0])), 0.5);
      return g.sum(g.square(g.reg_inverse(sym, 1e-2)));
    });
    CHECK(e < 1e-4);
  }
  (void)tight;
}

TEST_CASE("grad_check flags an injected adjoint error") {
  Rng rng(3);
  Matrix m = random_matrix(rng, 3, 3);
  GradCheckOptions opt;
  opt.inject_error = 0.05;
  auto res = grad_check({m}, {"m"},
                        [](Graph& g, const std::vector<Var>& v) {
                          return g.sum(g.square(v[0]));
                        },
                        opt);
  CHECK_FALSE(res.pass(1e-4));
  CHECK(res.worst_param == "m");
}

TEST_CASE("backward requires a scalar loss") {
  Graph g;
  Var a = g.parameter(Matrix::Zero(2, 2), "a");
  CHECK_THROWS_AS(g.backward(g.relu(a)), ShapeError);
}

TEST_CASE("no gradients allocated for constants") {
  Graph g;
  Var c = g.constant(Matrix::Ones(2, 2));
  Var p = g.parameter(Matrix::Ones(2, 2), "p");
  Var loss = g.sum(g.mul(c, p));
  g.backward(loss);
  CHECK(g.has_grad(p));
  CHECK_FALSE(g.has_grad(c));
}

TEST_CASE("identical graphs give bit-identical values and gradients") {
  Rng rng(99);
  Matrix a = random_matrix(rng, 6, 6);
  auto run = [&]() {
    Graph g;
    Var v = g.parameter(a, "a");
    Var gram = g.matmul(g.relu(v), g.transpose(g.relu(v)));
    Var loss = g.sum(g.square(g.reg_inverse(gram, 1.0)));
    g.backward(loss);
    return std::make_pair(g.scalar_value(loss), Matrix(g.grad(v)));
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}

}  // TEST_SUITE
