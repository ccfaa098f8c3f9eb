#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dpme/diagnostics.hpp"
#include "dpme/model.hpp"

namespace dpme {

// Strongly convex quadratic majorant of e_gamma psi(.; xi) anchored at the
// latest iterate:
//   value_at(x) = |x|^2/(2 gamma) - g_val - slope'(x - anchor)
// with g_val = |anchor|^2/(2 gamma) - e_gamma psi(anchor) and
// slope = prox/gamma + c_sub. Tight at its anchor, majorizes everywhere.
struct SurrogateCut {
  Vector anchor;
  double gamma = 0.0;
  double g_val = 0.0;
  Vector slope;
  int scenario_id = -1;
  double weight = 0.0;  // raw scenario weight; normalized by the master

  double value_at(const Vector& x) const {
    return x.squaredNorm() / (2.0 * gamma) - g_val - slope.dot(x - anchor);
  }
  double envelope_at_anchor() const {
    return anchor.squaredNorm() / (2.0 * gamma) - g_val;
  }
};

struct SolverConfig {
  double gamma0 = 1.0;
  double gamma_decay = 0.5;  // in (0, 1): makes {gamma_nu} summable
  double eps0 = 0.1;
  double eps_decay = 0.5;
  int max_outer = 100;
  int max_inner = 10000;
  // stopping thresholds on the reference pool
  double tol_feas_abs = 1e-2;
  double tol_feas_rel = 1e-4;
  double tol_obj_rel = 1e-4;
  double qp_tol = 1e-9;
  int qp_max_iter = 200;
  int threads = 0;  // 0: hardware concurrency
  bool record_inner = false;          // keep per-step inner records in the report
  bool final_envelope_sweep = false;  // also evaluate zeta_hat at the inner exit point
  std::uint64_t seed = 0;             // echoed into reports for provenance
};

enum class SolveStatus { Converged, MaxOuter, InnerStall, RecourseInfeasible };
const char* to_string(SolveStatus s);

struct TraceRow {
  int outer = 0;  // 1-based
  int inner_iters = 0;
  long long S_nu = 0;
  double gamma = 0.0;
  double epsilon = 0.0;
  double objective = 0.0;
  double feas_abs = 0.0;
  double feas_rel = 0.0;
  double kkt_abs = 0.0;
  double kkt_rel = 0.0;
  double criticality = 0.0;  // |x_{i+1} - x_i| / gamma at the inner exit
  double time_s = 0.0;       // cumulative wall clock
};

struct InnerStep {
  double zeta_hat = 0.0;  // phi + sum w e_gamma psi at the anchor
  double step_norm = 0.0;
  double master_objective = 0.0;
};

struct InnerResult {
  Vector x_next;
  int iterations = 0;  // master solves executed
  std::vector<InnerStep> steps;
  std::vector<SurrogateCut> final_cuts;       // built at the last anchor
  std::vector<EnvelopeResult> final_envelopes;
  double final_step_norm = 0.0;
  std::optional<double> zeta_hat_exit;  // filled by the optional final sweep
  bool stalled = false;
};

struct SolveReport {
  Vector x_final;
  double objective = 0.0;  // zbar on the reference pool
  std::vector<ScenarioSolution> second_stage;
  double feas_abs = 0.0, feas_rel = 0.0;
  double kkt_abs = 0.0, kkt_rel = 0.0;
  double criticality = 0.0;        // cheap certificate at exit
  double normal_cone_dist = 0.0;   // projection-QP residual at exit
  std::vector<TraceRow> trace;
  std::vector<std::vector<InnerStep>> inner_steps;  // when record_inner
  SolveStatus status = SolveStatus::MaxOuter;
  int offending_scenario = -1;  // set for RecourseInfeasible
  SolverConfig config;          // resolved configuration, echoed
  double gamma_final = 0.0;
  double epsilon_final = 0.0;
  long long reference_scenarios = 0;
  bool heuristic_continuous = false;
  std::string message;
};

// builds the Eq-style cut by solving the partial Moreau subproblem at anchor
SurrogateCut build_cut(const FirstStage& fs, const Scenario& sc, const Vector& anchor,
                       double gamma, double qp_tol = 1e-9, int scenario_id = -1,
                       EnvelopeResult* envelope_out = nullptr);

struct MasterResult {
  Vector x;
  double objective = 0.0;  // phi(x) + weighted cut values, constants restored
};

// argmin over X of phi(x) + sum_s wbar_s cut_s(x); curvature P + (1/gamma) I
// makes the minimizer unique. Cut weights are normalized to sum to one.
MasterResult solve_master(const FirstStage& fs, std::span<const SurrogateCut> cuts,
                          double gamma, double qp_tol = 1e-9);

// Algorithm inner loop: fresh cuts at the current iterate (one per scenario,
// built in parallel), master solve, stop when |x_{i+1} - x_i| <= eps * gamma.
InnerResult inner_loop(const FirstStage& fs, std::span<const Scenario> scenarios,
                       const Vector& x_start, double gamma, double eps,
                       const SolverConfig& cfg);

struct CriticalityResult {
  double normal_cone_dist = 0.0;  // dist(0, v + N_X(x)), Euclidean
  double cheap_certificate = 0.0; // |x_next - x_prev| / gamma when x_prev given
  Vector v;
};

// v = grad phi(x_next) + sum_s wbar_s [ (x_next - prox_s)/gamma - c_sub_s ];
// the distance to -N_X(x_next) is a nonnegative least-squares over the
// active-constraint normals. Normal directions of the Xbar box are added for
// every proximal point that touches its boundary; they vanish when all prox
// points are interior.
CriticalityResult criticality_residual(const FirstStage& fs,
                                       std::span<const Scenario> scenarios,
                                       const Vector& x_next,
                                       std::span<const EnvelopeResult> envelopes,
                                       double gamma,
                                       const Vector* x_prev = nullptr,
                                       double qp_tol = 1e-9);

// Scenario feed for the outer loop; lets the fixed-scenario and the
// incremental-sampling solvers share one driver verbatim.
class ScenarioSource {
 public:
  virtual ~ScenarioSource() = default;
  virtual std::span<const Scenario> working(int outer) = 0;  // outer is 0-based
  virtual std::span<const Scenario> reference() = 0;
  virtual bool heuristic() const { return false; }
};

SolveReport solve_with_source(const FirstStage& fs, ScenarioSource& source,
                              const SolverConfig& cfg);

// Fixed-scenario solve: outer loop over gamma_nu = gamma0 * decay^nu with the
// inner loop above; stops when the feasibility and relative objective-change
// thresholds all hold (checked from the second outer iteration on).
SolveReport solve(const FirstStage& fs, std::span<const Scenario> scenarios,
                  const SolverConfig& cfg = {});

}  // namespace dpme
