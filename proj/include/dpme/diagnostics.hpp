#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpme/model.hpp"

namespace dpme {

struct KktReport {
  double feas_abs = 0.0;
  double feas_rel = 0.0;
  double opt_abs = 0.0;  // stationarity + complementarity, infinity norms
  double opt_rel = 0.0;
  double kkt_abs = 0.0;  // max(feas_abs, opt_abs)
  double kkt_rel = 0.0;
  std::string worst_feas_row;
  std::string worst_opt_row;
};

// Deterministic-equivalent KKT residuals at (x, {y_s}).
//
// Second-stage multipliers come from each scenario's recourse QP solved at
// x; first-stage multipliers (polyhedral rows and box) are estimated by a
// sign-constrained least-squares fit of the Lagrangian gradient over the
// active rows. Bilinear cross terms are included: d/dx picks up B_s y_s,
// d/dy picks up B_s' x. Complementarity is evaluated after the fit, not
// inside it.
//
// Scaling: feas_rel divides by max(1, feas_abs at (x0, y = 0)); opt_rel
// divides by max(1, objective gradient infinity norm at (x, {y_s})).
KktReport kkt_residuals(const FirstStage& fs, std::span<const Scenario> scenarios,
                        const Vector& x, const std::vector<Vector>& ys,
                        double qp_tol = 1e-9, int threads = 0);

// Same check with the second-stage duals already in hand (avoids the
// per-scenario re-solve when the caller just computed them).
KktReport kkt_residuals(const FirstStage& fs, std::span<const Scenario> scenarios,
                        const Vector& x, const std::vector<ScenarioSolution>& sols,
                        double qp_tol = 1e-9, int threads = 0);

struct OracleOptions {
  double sweep_tol = 1e-9;  // stop when the block sweep improves less than this
  int max_sweeps = 500;
  double qp_tol = 1e-9;
  int threads = 0;
  std::vector<Vector> initial_points;  // used before random starts
};

struct OracleResult {
  double best_objective = kInf;
  Vector best_x;
  int starts = 0;
  std::vector<double> start_objectives;
  std::vector<bool> block_stationary;  // no-move final sweep succeeded
};

// Multistart alternating convex minimization over the deterministic
// equivalent: all y_s blocks at fixed x (parallel QPs), then the x block at
// fixed {y_s}. Desk-scale baseline; the bilinear term is linear in each
// block, so every step is a convex QP.
OracleResult oracle_solve(const FirstStage& fs, std::span<const Scenario> scenarios,
                          int n_starts, std::uint64_t seed,
                          const OracleOptions& opts = {});

// Exhaustive evaluation of zbar_S on a uniform grid over X; toy instances
// only (n1 <= 2 enforced). resolution is the grid spacing.
double grid_bruteforce(const FirstStage& fs, std::span<const Scenario> scenarios,
                       double resolution, double qp_tol = 1e-9, int threads = 0);

struct SliceSpec {
  Vector base;      // remaining coordinates held at this point
  int axis_i = 0;
  int axis_j = -1;  // second axis, -1 for a 1-D slice
  int n_i = 101;
  int n_j = 0;
  // grid ranges; NaN means the Xbar span of that axis
  double lo_i = std::numeric_limits<double>::quiet_NaN();
  double hi_i = std::numeric_limits<double>::quiet_NaN();
  double lo_j = std::numeric_limits<double>::quiet_NaN();
  double hi_j = std::numeric_limits<double>::quiet_NaN();
};

struct SliceRow {
  double xi = 0.0;
  double xj = 0.0;   // unused for 1-D slices
  double value = 0;  // +inf marks points outside dom psi
};

struct SliceTable {
  bool two_d = false;
  std::vector<SliceRow> rows;
};

// psi(.; xi) along one or two axes, computed through evaluate_recourse so
// the table reflects the public evaluation path exactly. Rows outside Xbar
// (or with infeasible recourse) carry +inf.
SliceTable recourse_slice(const FirstStage& fs, const Scenario& sc,
                          const SliceSpec& spec, double qp_tol = 1e-9);

// empirical Lipschitz moduli of the lifted recourse (sampled pairs)
LipschitzEstimate probe_lipschitz(const FirstStage& fs, const Scenario& sc,
                                  int n_pairs, std::uint64_t seed,
                                  double qp_tol = 1e-9);

}  // namespace dpme
