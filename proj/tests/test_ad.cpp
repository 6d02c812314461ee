#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dem/ad.hpp"

using namespace dem;
using namespace dem::ad;

namespace {

Real max_rel_error(const VecX& got, const VecX& want) {
  Real worst = 0.0;
  for (Eigen::Index i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::abs(got[i] - want[i]) /
                                std::max(1.0, std::abs(want[i])));
  return worst;
}

void check_against_fd(const Program& prog, const VecX& theta,
                      Real tol = 1e-5) {
  auto [loss, grad] = value_and_parameter_gradient(prog, theta);
  VecX fd = finite_difference_gradient(prog, theta);
  CHECK(std::isfinite(loss));
  CHECK(max_rel_error(grad, fd) < tol);
}

MatX random_matrix(Rng& rng, int r, int c, Real lo = -1.0, Real hi = 1.0) {
  MatX m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

}  // namespace

TEST_CASE("dot product of theta with itself") {
  Program prog;
  NodeId th = prog.param(1, 2, "theta");
  prog.set_output(prog.frob_sq(th));
  VecX theta(2);
  theta << 1, 2;
  auto [loss, grad] = value_and_parameter_gradient(prog, theta);
  CHECK(loss == doctest::Approx(5.0));
  CHECK(grad[0] == doctest::Approx(2.0));
  CHECK(grad[1] == doctest::Approx(4.0));
}

TEST_CASE("every op matches finite differences") {
  Rng rng(42);

  SUBCASE("matmul chain") {
    Program q;
    NodeId Xq = q.constant(random_matrix(rng, 4, 3));
    NodeId Wq = q.param(3, 5);
    NodeId Vq = q.param(5, 2);
    q.set_output(q.sum(q.frob_sq(q.matmul(q.matmul(Xq, Wq), Vq))));
    check_against_fd(q, random_matrix(rng, q.num_params(), 1).col(0));
  }

  SUBCASE("sparse matmul") {
    SpMat S(4, 3);
    std::vector<Eigen::Triplet<Real>> t{{0, 0, 2.0}, {1, 2, -1.5}, {3, 1, 0.5}};
    S.setFromTriplets(t.begin(), t.end());
    Program p;
    NodeId W = p.param(2, 3);
    NodeId B = p.matmul(p.constant(random_matrix(rng, 3, 2)), W);  // 3x3
    p.set_output(p.sum(p.spmatmul(S, B)));
    check_against_fd(p, random_matrix(rng, p.num_params(), 1).col(0));
  }

  SUBCASE("add sub add_row hadamard scale shift") {
    Program p;
    NodeId A = p.param(3, 4);
    NodeId B = p.param(3, 4);
    NodeId row = p.param(1, 4);
    NodeId C = p.constant(random_matrix(rng, 3, 4));
    NodeId expr = p.hadamard(p.add(A, C), p.sub(B, C));
    expr = p.add_row(expr, row);
    expr = p.shift(p.scale(expr, -0.75), 0.3);
    p.set_output(p.sum(expr));
    check_against_fd(p, random_matrix(rng, p.num_params(), 1).col(0));
  }

  SUBCASE("tanh") {
    Program p;
    NodeId A = p.param(4, 2);
    p.set_output(p.sum(p.tanh(A)));
    check_against_fd(p, random_matrix(rng, p.num_params(), 1).col(0));
  }

  SUBCASE("pow with fractional exponent") {
    Program p;
    NodeId A = p.param(5, 1);
    p.set_output(p.sum(p.pow(p.shift(A, 3.0), -2.0 / 3.0)));
    check_against_fd(p, random_matrix(rng, p.num_params(), 1).col(0));
  }

  SUBCASE("col hstack permute") {
    Program p;
    NodeId A = p.param(4, 3);
    NodeId h = p.hstack({p.col(A, 2), p.col(A, 0), p.col(A, 1)});
    NodeId perm = p.permute_cols(h, {1, 2, 0});
    p.set_output(p.weighted_sum(perm, random_matrix(rng, 4, 3)));
    check_against_fd(p, random_matrix(rng, p.num_params(), 1).col(0));
  }

  SUBCASE("det3 trace3 frob_sq") {
    Program p;
    NodeId A = p.param(6, 9);
    NodeId mix = p.add(p.hadamard(p.det3(A), p.trace3(A)), p.frob_sq(A));
    p.set_output(p.sum(mix));
    // Parameters near identity-ish magnitudes keep det well-conditioned.
    check_against_fd(p, random_matrix(rng, p.num_params(), 1).col(0), 2e-5);
  }

  SUBCASE("weighted_sum") {
    Program p;
    NodeId A = p.param(7, 2);
    p.set_output(p.weighted_sum(A, random_matrix(rng, 7, 2)));
    check_against_fd(p, random_matrix(rng, p.num_params(), 1).col(0));
  }
}

TEST_CASE("det3 and trace3 match per-row Eigen computations") {
  Rng rng(7);
  MatX rows = random_matrix(rng, 8, 9);
  Program p;
  NodeId A = p.constant(rows);
  NodeId d = p.det3(A);
  NodeId t = p.trace3(A);
  NodeId f = p.frob_sq(A);
  p.set_output(p.sum(p.add(p.add(d, t), f)));
  Workspace ws;
  p.forward(VecX(0), ws);
  for (int r = 0; r < 8; ++r) {
    Mat3 M;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) M(i, j) = rows(r, 3 * i + j);
    CHECK(p.node_value(d, ws)(r, 0) == doctest::Approx(M.determinant()));
    CHECK(p.node_value(t, ws)(r, 0) == doctest::Approx(M.trace()));
    CHECK(p.node_value(f, ws)(r, 0) == doctest::Approx(M.squaredNorm()));
  }
}

TEST_CASE("tanh chain at zero parameters gives the hand-derived gradient") {
  // loss = sum over the single row of tanh(x W1 + b1) W2 + b2.
  // At theta = 0 only d(loss)/d(b2) is nonzero and equals 1.
  Program p;
  NodeId x = p.constant(MatX::Constant(1, 3, 0.7));
  NodeId W1 = p.param(3, 4, "W1");
  NodeId b1 = p.param(1, 4, "b1");
  NodeId W2 = p.param(4, 1, "W2");
  NodeId b2 = p.param(1, 1, "b2");
  NodeId h = p.tanh(p.add_row(p.matmul(x, W1), b1));
  p.set_output(p.sum(p.add_row(p.matmul(h, W2), b2)));

  VecX theta = VecX::Zero(p.num_params());
  auto [loss, grad] = value_and_parameter_gradient(p, theta);
  CHECK(loss == 0.0);
  VecX expected = VecX::Zero(p.num_params());
  expected[p.num_params() - 1] = 1.0;  // b2 is the last parameter block
  CHECK((grad - expected).lpNorm<Eigen::Infinity>() == 0.0);

  // Away from zero the same program still matches finite differences.
  Rng rng(3);
  check_against_fd(p, random_matrix(rng, p.num_params(), 1).col(0));
}

TEST_CASE("composite program mixing the whole vocabulary") {
  Rng rng(99);
  SpMat S(5, 5);
  std::vector<Eigen::Triplet<Real>> t;
  for (int i = 0; i < 5; ++i) t.emplace_back(i, (i + 1) % 5, 0.5);
  S.setFromTriplets(t.begin(), t.end());

  Program p;
  NodeId X = p.constant(random_matrix(rng, 5, 3));
  NodeId W1 = p.param(3, 9);
  NodeId b1 = p.param(1, 9);
  NodeId H = p.tanh(p.add_row(p.matmul(p.spmatmul(S, X), W1), b1));
  NodeId Hp = p.permute_cols(H, {0, 3, 6, 1, 4, 7, 2, 5, 8});
  NodeId F = p.shift(p.scale(p.add(H, Hp), 0.05), 0.0);
  // Shift diag columns by 1 through a constant to mimic F = grad u + I.
  MatX eye_rows = MatX::Zero(5, 9);
  eye_rows.col(0).setOnes();
  eye_rows.col(4).setOnes();
  eye_rows.col(8).setOnes();
  F = p.add(F, p.constant(eye_rows));
  NodeId J = p.det3(F, "det(F)");
  NodeId I1 = p.frob_sq(F);
  NodeId psi = p.add(p.hadamard(p.pow(J, -2.0 / 3.0, "J^(-2/3)"), I1),
                     p.hadamard(p.shift(J, -1.0), p.shift(J, -1.0)));
  p.set_output(p.weighted_sum(psi, MatX::Constant(5, 1, 0.125)));

  check_against_fd(p, 0.3 * random_matrix(rng, p.num_params(), 1).col(0), 2e-5);
}

TEST_CASE("forward-mode tangent chain stays differentiable in theta") {
  // u = tanh(X W + b) V. The directional derivative in input direction D is
  // du = ((1 - A*A) .* (D W)) V with A = tanh(X W + b). A loss on du must
  // still differentiate correctly with respect to W, b, V.
  Rng rng(12);
  MatX Xv = random_matrix(rng, 6, 3);
  MatX Dv = MatX::Zero(6, 3);
  Dv.col(1).setOnes();  // seed direction e2 at every node

  Program p;
  NodeId X = p.constant(Xv);
  NodeId D = p.constant(Dv);
  NodeId W = p.param(3, 8);
  NodeId b = p.param(1, 8);
  NodeId V = p.param(8, 3);
  NodeId A = p.tanh(p.add_row(p.matmul(X, W), b));
  NodeId gate = p.sub(p.constant(MatX::Ones(6, 8)), p.hadamard(A, A));
  NodeId dU = p.matmul(p.hadamard(gate, p.matmul(D, W)), V);
  p.set_output(p.sum(p.frob_sq(dU)));

  check_against_fd(p, 0.5 * random_matrix(rng, p.num_params(), 1).col(0));
}

TEST_CASE("non-finite intermediates raise tagged errors") {
  SUBCASE("fractional power of a non-positive base") {
    Program p;
    NodeId A = p.param(2, 1);
    p.set_output(p.sum(p.pow(A, -2.0 / 3.0, "det(F)^(-2/3)")));
    VecX theta(2);
    theta << 1.0, -0.5;
    Workspace ws;
    CHECK_THROWS_AS(p.value(theta, ws), Error);
    try {
      p.value(theta, ws);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NonFiniteLoss);
      CHECK(std::string(e.what()).find("det(F)^(-2/3)") != std::string::npos);
    }
  }

  SUBCASE("overflow to infinity") {
    Program p;
    NodeId A = p.param(1, 1, "theta");
    p.set_output(p.sum(p.hadamard(A, A)));
    VecX theta(1);
    theta << 1e200;  // square overflows to infinity
    Workspace ws;
    try {
      p.value(theta, ws);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NonFiniteLoss);
      CHECK(std::string(e.what()).find("hadamard") != std::string::npos);
    }
  }
}

TEST_CASE("shape and contract violations are rejected at build time") {
  Program p;
  NodeId A = p.param(2, 3);
  NodeId B = p.param(3, 2);
  CHECK_THROWS_AS(p.add(A, B), Error);
  CHECK_THROWS_AS(p.matmul(A, A), Error);
  CHECK_THROWS_AS(p.col(A, 5), Error);
  CHECK_THROWS_AS(p.det3(A, ""), Error);
  CHECK_THROWS_AS(p.permute_cols(A, {0, 1}), Error);
  CHECK_THROWS_AS(p.set_output(A), Error);

  p.set_output(p.sum(A));
  VecX wrong = VecX::Zero(5);
  Workspace ws;
  CHECK_THROWS_AS(p.value(wrong, ws), Error);
}

TEST_CASE("evaluation is bit-reproducible and workspaces are independent") {
  Rng rng(1234);
  Program p;
  NodeId X = p.constant(random_matrix(rng, 20, 3));
  NodeId W = p.param(3, 7);
  NodeId b = p.param(1, 7);
  NodeId V = p.param(7, 1);
  p.set_output(
      p.weighted_sum(p.matmul(p.tanh(p.add_row(p.matmul(X, W), b)), V),
                     random_matrix(rng, 20, 1)));

  VecX theta = random_matrix(rng, p.num_params(), 1).col(0);
  Workspace w1, w2;
  VecX g1, g2;
  const Real l1 = p.value_and_gradient(theta, g1, w1);
  // Interleave another evaluation at different theta in a second workspace.
  VecX other = 2.0 * theta;
  p.value(other, w2);
  const Real l2 = p.value_and_gradient(theta, g2, w2);
  CHECK(l1 == l2);
  CHECK((g1.array() == g2.array()).all());

  // Repeated evaluation in the same workspace is also bitwise stable.
  VecX g3;
  const Real l3 = p.value_and_gradient(theta, g3, w1);
  CHECK(l1 == l3);
  CHECK((g1.array() == g3.array()).all());
}
