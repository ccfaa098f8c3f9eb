#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "dpme/qp.hpp"
#include "dpme/rng.hpp"

using namespace dpme;

namespace {

// Direct KKT solve for an equality-constrained QP; the inequality-free
// oracle used to cross-check the interior point path.
Vector equality_kkt_solve(const Matrix& Q, const Vector& q, const Matrix& A,
                          const Vector& b) {
  Eigen::Index n = q.size(), m = b.size();
  Matrix K = Matrix::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = Q;
  K.topRightCorner(n, m) = A.transpose();
  K.bottomLeftCorner(m, n) = A;
  Vector rhs(n + m);
  rhs.head(n) = -q;
  rhs.tail(m) = b;
  Vector sol = K.fullPivLu().solve(rhs);
  return sol.head(n);
}

QpProblem random_strictly_convex(Rng& rng, int n, int meq, int min,
                                 bool loose_bounds) {
  QpProblem p = QpProblem::make(n);
  Matrix M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = rng.uniform(-1.0, 1.0);
  p.Q = M.transpose() * M + 0.5 * Matrix::Identity(n, n);
  for (int i = 0; i < n; ++i) p.q[i] = rng.uniform(-2.0, 2.0);
  // anchor feasibility at a known interior point
  Vector v0(n);
  for (int i = 0; i < n; ++i) v0[i] = rng.uniform(-1.0, 1.0);
  if (meq > 0) {
    p.A_eq = Matrix(meq, n);
    for (int i = 0; i < meq; ++i)
      for (int j = 0; j < n; ++j) p.A_eq(i, j) = rng.uniform(-1.0, 1.0);
    p.b_eq = p.A_eq * v0;
  }
  if (min > 0) {
    p.A_in = Matrix(min, n);
    p.b_in = Vector(min);
    for (int i = 0; i < min; ++i) {
      for (int j = 0; j < n; ++j) p.A_in(i, j) = rng.uniform(-1.0, 1.0);
      p.b_in[i] = p.A_in.row(i).dot(v0) + rng.uniform(0.05, 2.0);
    }
  }
  double span = loose_bounds ? 50.0 : rng.uniform(0.5, 3.0);
  for (int i = 0; i < n; ++i) {
    p.lower[i] = v0[i] - span * rng.uniform(0.2, 1.0);
    p.upper[i] = v0[i] + span * rng.uniform(0.2, 1.0);
  }
  return p;
}

}  // namespace

TEST_CASE("active bound: min 0.5 v^2 over [1,2]") {
  QpProblem p = QpProblem::make(1);
  p.Q(0, 0) = 1.0;
  p.lower[0] = 1.0;
  p.upper[0] = 2.0;
  QpSolution s = solve_qp(p);
  REQUIRE(s.status == QpStatus::Optimal);
  CHECK(s.primal[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(s.dual_lower[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.dual_upper[0] == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(s.kkt_residual <= 1e-9);
}

TEST_CASE("contradictory constraints are declared infeasible") {
  QpProblem p = QpProblem::make(1);
  p.A_eq = Matrix::Constant(1, 1, 1.0);
  p.b_eq = Vector::Constant(1, 3.0);
  p.lower[0] = 0.0;
  p.upper[0] = 1.0;
  QpSolution s = solve_qp(p);
  CHECK(s.status == QpStatus::Infeasible);
}

TEST_CASE("5-var strictly convex QP with 2 equalities matches reduced KKT solve") {
  Rng rng(20240517);
  for (int trial = 0; trial < 25; ++trial) {
    QpProblem p = random_strictly_convex(rng, 5, 2, 3, /*loose_bounds=*/true);
    QpSolution s = solve_qp(p);
    REQUIRE(s.status == QpStatus::Optimal);
    Vector v_direct = equality_kkt_solve(p.Q, p.q, p.A_eq, p.b_eq);
    // only comparable when inequality rows and bounds are inactive there
    bool inactive = ((p.b_in - p.A_in * v_direct).array() > 1e-6).all() &&
                    ((v_direct - p.lower).array() > 1e-6).all() &&
                    ((p.upper - v_direct).array() > 1e-6).all();
    if (!inactive) continue;
    CHECK((s.primal - v_direct).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("optimal solutions satisfy feasibility, stationarity, complementarity") {
  Rng rng(77);
  int solved = 0;
  for (int trial = 0; trial < 200; ++trial) {
    int n = 1 + static_cast<int>(rng.next_u64() % 8);
    int meq = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n));
    int min = static_cast<int>(rng.next_u64() % 5);
    QpProblem p = random_strictly_convex(rng, n, meq, min, trial % 3 == 0);
    QpSolution s = solve_qp(p, 1e-9, 200);
    REQUIRE(s.status == QpStatus::Optimal);
    ++solved;
    double tol = 1e-9;
    if (p.num_in() > 0)
      CHECK(((p.A_in * s.primal - p.b_in).array() <= tol).all());
    if (p.num_eq() > 0)
      CHECK((p.A_eq * s.primal - p.b_eq).cwiseAbs().maxCoeff() <= tol);
    CHECK(((s.primal - p.lower).array() >= -tol).all());
    CHECK(((p.upper - s.primal).array() >= -tol).all());
    CHECK((s.dual_in.array() >= 0.0).all());
    CHECK(s.kkt_residual <= tol);
  }
  CHECK(solved == 200);
}

TEST_CASE("objective never beats a feasible grid on 2-variable instances") {
  Rng rng(3141);
  for (int trial = 0; trial < 10; ++trial) {
    QpProblem p = random_strictly_convex(rng, 2, 0, 2, false);
    QpSolution s = solve_qp(p);
    REQUIRE(s.status == QpStatus::Optimal);
    double grid_best = kInf;
    int steps = 60;
    for (int i = 0; i <= steps; ++i) {
      for (int j = 0; j <= steps; ++j) {
        Vector v(2);
        v[0] = p.lower[0] + (p.upper[0] - p.lower[0]) * i / steps;
        v[1] = p.lower[1] + (p.upper[1] - p.lower[1]) * j / steps;
        if (((p.A_in * v - p.b_in).array() <= 0.0).all())
          grid_best = std::min(grid_best, qp_objective(p, v));
      }
    }
    CHECK(s.objective <= grid_best + 1e-6);
  }
}

TEST_CASE("malformed problems are rejected before solving") {
  QpProblem p = QpProblem::make(2);
  SUBCASE("dimension mismatch") {
    p.q = Vector::Zero(3);
    CHECK_THROWS_AS(solve_qp(p), std::invalid_argument);
  }
  SUBCASE("asymmetric Q") {
    p.Q(0, 1) = 1.0;
    CHECK_THROWS_AS(solve_qp(p), std::invalid_argument);
  }
  SUBCASE("indefinite Q") {
    p.Q(0, 0) = -1.0;
    p.lower.setConstant(-1.0);
    p.upper.setConstant(1.0);
    CHECK_THROWS_AS(solve_qp(p), std::invalid_argument);
  }
  SUBCASE("crossed bounds") {
    p.lower[0] = 2.0;
    p.upper[0] = 1.0;
    CHECK_THROWS_AS(solve_qp(p), std::invalid_argument);
  }
}

TEST_CASE("iteration cap reports MaxIter with the best iterate") {
  Rng rng(9);
  QpProblem p = random_strictly_convex(rng, 6, 2, 3, false);
  QpSolution s = solve_qp(p, 1e-9, 2);
  CHECK(s.status == QpStatus::MaxIter);
  CHECK(s.primal.size() == 6);
  CHECK(std::isfinite(s.kkt_residual));
}

TEST_CASE("pinned coordinate (lower == upper) is honored") {
  QpProblem p = QpProblem::make(2);
  p.Q = Matrix::Identity(2, 2);
  p.q << -1.0, -1.0;
  p.lower << 0.25, -5.0;
  p.upper << 0.25, 5.0;
  QpSolution s = solve_qp(p);
  REQUIRE(s.status == QpStatus::Optimal);
  CHECK(s.primal[0] == doctest::Approx(0.25));
  CHECK(s.primal[1] == doctest::Approx(1.0));
}

TEST_CASE("linear program over a simplex") {
  // min -x0 - 2 x1, x >= 0, x0 + x1 <= 1 -> (0, 1)
  QpProblem p = QpProblem::make(2);
  p.q << -1.0, -2.0;
  p.A_in = Matrix::Constant(1, 2, 1.0);
  p.b_in = Vector::Constant(1, 1.0);
  p.lower.setZero();
  QpSolution s = solve_qp(p);
  REQUIRE(s.status == QpStatus::Optimal);
  CHECK(s.primal[0] == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(s.primal[1] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(s.objective == doctest::Approx(-2.0).epsilon(1e-8));
}
