#pragma once

#include <Eigen/Dense>
#include <limits>

namespace dpme {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class QpStatus { Optimal, Infeasible, Unbounded, MaxIter };

const char* to_string(QpStatus s);

// Dense convex QP in canonical form:
//
//   minimize  0.5 v'Q v + q'v
//   s.t.      A_eq v  = b_eq
//             A_in v <= b_in
//             lower <= v <= upper     (entries may be +-inf)
//
// Q must be symmetric positive semidefinite; every subproblem, master
// problem and verification step in this project is cast into this form.
struct QpProblem {
  Matrix Q;
  Vector q;
  Matrix A_eq;
  Vector b_eq;
  Matrix A_in;
  Vector b_in;
  Vector lower;
  Vector upper;

  Eigen::Index num_vars() const { return q.size(); }
  Eigen::Index num_eq() const { return b_eq.size(); }
  Eigen::Index num_in() const { return b_in.size(); }

  // n variables, no constraints, free bounds
  static QpProblem make(Eigen::Index n);
};

struct QpSolution {
  Vector primal;
  Vector dual_eq;     // multipliers of A_eq v = b_eq, free sign
  Vector dual_in;     // multipliers of A_in v <= b_in, >= 0
  Vector dual_lower;  // multipliers of v >= lower, >= 0
  Vector dual_upper;  // multipliers of v <= upper, >= 0
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  double objective = 0.0;
  double kkt_residual = kInf;
};

// Primal-dual interior point (Mehrotra predictor-corrector) on the
// bound-augmented formulation. Stateless; safe to call concurrently.
//
// Optimal guarantees kkt_residual <= tol. Infeasible is certified by a
// phase-1 elastic LP whose minimum total violation exceeds tol. MaxIter
// returns the best iterate found; the caller decides whether to accept it.
// Dimension mismatches, asymmetric or indefinite Q, and lower > upper are
// rejected up front with std::invalid_argument.
QpSolution solve_qp(const QpProblem& p, double tol = 1e-9, int max_iter = 200);

// Infinity norm over stationarity, primal feasibility violations and
// complementarity products. Independent of the solve path; usable as an
// oracle on any candidate point.
double qp_kkt_residual(const QpProblem& p, const QpSolution& s);

double qp_objective(const QpProblem& p, const Vector& v);

}  // namespace dpme
