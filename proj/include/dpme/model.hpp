#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpme/qp.hpp"

namespace dpme {

// First-stage data: phi(x) = c'x + 0.5 x'P x over
//   X    = { box_lower <= x <= box_upper, A_ineq x <= b_ineq, A_eq x = b_eq }
//   Xbar = [box_lower - xbar_margin, box_upper + xbar_margin]
// Xbar is deliberately a pure box; the polyhedral rows of X are not imposed
// on it, so X sits in the interior of Xbar by construction.
struct FirstStage {
  Vector c;
  Matrix P;
  Vector box_lower, box_upper;
  Matrix A_ineq;
  Vector b_ineq;
  Matrix A_eq;
  Vector b_eq;
  Vector xbar_margin;
  Vector x0;  // shared initial iterate, inside X

  Eigen::Index n() const { return c.size(); }
  Vector xbar_lower() const { return box_lower - xbar_margin; }
  Vector xbar_upper() const { return box_upper + xbar_margin; }
  bool in_xbar(const Vector& z, double tol = 1e-12) const;

  double phi(const Vector& x) const { return c.dot(x) + 0.5 * x.dot(P * x); }
  Vector phi_grad(const Vector& x) const { return c + P * x; }
};

// per-coordinate margin max(0.05 * span, 1e-3)
Vector default_xbar_margin(const Vector& lo, const Vector& hi);

// One realization xi^s of the bilinear recourse
//   f(x, y) = a'x + b'y + x'B y
//   G(x, y) <= 0  given by  C x + D y <= h,  F y = d,  y_lower <= y <= y_upper
// Finite y boxes keep the second-stage feasible set compact.
struct Scenario {
  Vector a;  // n1
  Vector b;  // n2
  Matrix B;  // n1 x n2
  Matrix C;  // mj x n1
  Matrix D;  // mj x n2
  Vector h;  // mj
  Matrix F;  // me x n2
  Vector d;  // me
  Vector y_lower, y_upper;
  double weight = 0.0;  // probability mass; normalized over the working set

  Eigen::Index n2() const { return b.size(); }
};

struct BilinearTwoStageModel {
  FirstStage first_stage;
  std::vector<Scenario> scenarios;
};

// Second-stage problem infeasible at a first-stage point inside Xbar:
// relatively complete recourse is violated. Hard error during solves, a
// soft report inside validate_instance.
class InfeasibleRecourseError : public std::runtime_error {
 public:
  InfeasibleRecourseError(int scenario, std::string what)
      : std::runtime_error(std::move(what)), scenario_id(scenario) {}
  int scenario_id;
};

struct RecourseResult {
  double value = kInf;  // +inf marks z outside Xbar
  Vector y;
  QpSolution qp;
  bool finite() const { return std::isfinite(value); }
};

struct LiftedResult {
  double value = kInf;  // +inf if x outside Xbar, -inf if z outside Xbar
  Vector y;
  QpSolution qp;
};

// e_gamma psi(z) together with everything the surrogate cut needs
struct EnvelopeResult {
  double value = 0.0;
  Vector prox_x;  // minimizing x in Xbar
  Vector y_opt;
  Vector c_sub;  // -(a + B y_opt), an element of the concave-part subdifferential
  QpSolution qp;
};

// psi(z; xi) = a'z + min_y { (b + B'z)'y : C z + D y <= h, F y = d, y box }
// for z in Xbar; +inf outside.
RecourseResult evaluate_recourse(const FirstStage& fs, const Scenario& sc,
                                 const Vector& z, double qp_tol = 1e-9,
                                 int scenario_id = -1);

// psibar(x, z; xi): x fixed in the constraints, z fixed in the objective.
LiftedResult evaluate_lifted(const FirstStage& fs, const Scenario& sc,
                             const Vector& x, const Vector& z,
                             double qp_tol = 1e-9, int scenario_id = -1);

// e_gamma psi(z; xi) = min_{x in Xbar, y} f(z, y) + |x - z|^2 / (2 gamma)
//                      s.t. C x + D y <= h, F y = d, y box.
// One convex QP over (x, y); the reported value includes the constant a'z.
EnvelopeResult partial_moreau(const FirstStage& fs, const Scenario& sc,
                              const Vector& z, double gamma,
                              double qp_tol = 1e-9, int scenario_id = -1);

struct ProbeFailure {
  int probe_index;
  int scenario;
};

struct ValidationReport {
  bool x_nonempty = false;
  int probes = 0;
  std::vector<ProbeFailure> failures;
  double kappa1_hat = 0.0;  // empirical Lipschitz modulus of psibar(., z)
  double kappa2_hat = 0.0;  // empirical Lipschitz modulus of psibar(x, .)
  double weight_sum = 0.0;
  bool ok() const { return x_nonempty && failures.empty(); }
};

// Empirical probe of the recourse structure: X nonempty (feasibility LP),
// second-stage feasibility at n_probe uniform points of Xbar for every
// scenario, and sampled Lipschitz moduli. Report-only; never throws for
// probe failures.
ValidationReport validate_instance(const FirstStage& fs,
                                   std::span<const Scenario> scenarios,
                                   int n_probe, std::uint64_t seed,
                                   double qp_tol = 1e-9, int threads = 0);

struct LipschitzEstimate {
  double kappa1 = 0.0;
  double kappa2 = 0.0;
};

// max over sampled pairs of |psibar(x1,z) - psibar(x2,z)| / |x1 - x2| and
// the analogous ratio in the second argument (x from Xbar, z from X).
LipschitzEstimate estimate_lipschitz(const FirstStage& fs, const Scenario& sc,
                                     int n_pairs, std::uint64_t seed,
                                     double qp_tol = 1e-9);

// Euclidean projection onto X; used for initial points and X-interior samples.
Vector project_onto_x(const FirstStage& fs, const Vector& point,
                      double qp_tol = 1e-9);

// Draw a point of X: uniform box sample projected onto the polyhedron.
Vector sample_x(const FirstStage& fs, class Rng& rng, double qp_tol = 1e-9);

// weights of the working set normalized to sum to one
Vector normalized_weights(std::span<const Scenario> scenarios);

// Per-scenario second-stage solution at a fixed first-stage point.
struct ScenarioSolution {
  double value = 0.0;  // f(x, y; xi) at the solution
  Vector y;
  Vector dual_in;  // joint rows C x + D y <= h
  Vector dual_eq;  // F y = d
  Vector dual_lo, dual_up;
};

ScenarioSolution to_scenario_solution(const RecourseResult& r);

// zbar_S(x) = phi(x) + sum_s wbar_s psi(x; xi^s); per-scenario solves run in
// parallel, the reduction is in scenario order.
double sample_average_objective(const FirstStage& fs,
                                std::span<const Scenario> scenarios,
                                const Vector& x, double qp_tol = 1e-9,
                                int threads = 0,
                                std::vector<ScenarioSolution>* out = nullptr);

}  // namespace dpme
