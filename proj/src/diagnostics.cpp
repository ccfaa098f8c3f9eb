#include "dpme/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "dpme/parallel.hpp"
#include "dpme/rng.hpp"

namespace dpme {

namespace {

struct Worst {
  double value = 0.0;
  std::string row;
  void update(double v, const std::string& name) {
    if (v > value) {
      value = v;
      row = name;
    }
  }
};

// max violation over every row of the deterministic equivalent
Worst feasibility_violation(const FirstStage& fs, std::span<const Scenario> scenarios,
                            const Vector& x, const std::vector<Vector>& ys) {
  Worst w;
  if (fs.b_ineq.size() > 0) {
    Vector viol = fs.A_ineq * x - fs.b_ineq;
    for (Eigen::Index k = 0; k < viol.size(); ++k)
      w.update(viol[k], "x_ineq[" + std::to_string(k) + "]");
  }
  if (fs.b_eq.size() > 0) {
    Vector viol = fs.A_eq * x - fs.b_eq;
    for (Eigen::Index k = 0; k < viol.size(); ++k)
      w.update(std::abs(viol[k]), "x_eq[" + std::to_string(k) + "]");
  }
  for (Eigen::Index i = 0; i < fs.n(); ++i) {
    w.update(fs.box_lower[i] - x[i], "x_box_lo[" + std::to_string(i) + "]");
    w.update(x[i] - fs.box_upper[i], "x_box_up[" + std::to_string(i) + "]");
  }
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    const Scenario& sc = scenarios[s];
    const Vector& y = ys[s];
    std::string tag = "s=" + std::to_string(s) + ":";
    if (sc.h.size() > 0) {
      Vector viol = sc.C * x + sc.D * y - sc.h;
      for (Eigen::Index k = 0; k < viol.size(); ++k)
        w.update(viol[k], tag + "joint[" + std::to_string(k) + "]");
    }
    if (sc.d.size() > 0) {
      Vector viol = sc.F * y - sc.d;
      for (Eigen::Index k = 0; k < viol.size(); ++k)
        w.update(std::abs(viol[k]), tag + "eq[" + std::to_string(k) + "]");
    }
    for (Eigen::Index j = 0; j < sc.n2(); ++j) {
      w.update(sc.y_lower[j] - y[j], tag + "y_lo[" + std::to_string(j) + "]");
      w.update(y[j] - sc.y_upper[j], tag + "y_up[" + std::to_string(j) + "]");
    }
  }
  return w;
}

}  // namespace

KktReport kkt_residuals(const FirstStage& fs, std::span<const Scenario> scenarios,
                        const Vector& x, const std::vector<ScenarioSolution>& sols,
                        double qp_tol, int threads) {
  (void)threads;
  const std::size_t S = scenarios.size();
  if (sols.size() != S)
    throw std::invalid_argument("kkt_residuals: one second-stage solution per scenario required");
  Vector wts = normalized_weights(scenarios);
  KktReport rep;

  std::vector<Vector> ys(S);
  for (std::size_t s = 0; s < S; ++s) ys[s] = sols[s].y;

  Worst feas = feasibility_violation(fs, scenarios, x, ys);
  rep.feas_abs = std::max(feas.value, 0.0);
  rep.worst_feas_row = feas.row;

  // objective gradient of the deterministic equivalent
  Vector grad_x = fs.phi_grad(x);
  for (std::size_t s = 0; s < S; ++s)
    grad_x.noalias() += wts[static_cast<Eigen::Index>(s)] * (scenarios[s].a + scenarios[s].B * ys[s]);
  double grad_inf = grad_x.size() ? grad_x.cwiseAbs().maxCoeff() : 0.0;

  // x-stationarity before first-stage multipliers: second-stage joint rows
  // contribute C_s' (w_s lambda_s)
  Vector r0 = grad_x;
  for (std::size_t s = 0; s < S; ++s) {
    double w = wts[static_cast<Eigen::Index>(s)];
    if (scenarios[s].h.size() > 0)
      r0.noalias() += scenarios[s].C.transpose() * (w * sols[s].dual_in);
  }

  // active first-stage rows; the fit is restricted to them so the
  // complementarity evaluated afterwards stays honest
  std::vector<Vector> cols;
  std::vector<bool> sign_constrained;
  std::vector<std::string> col_names;
  if (fs.b_ineq.size() > 0) {
    Vector slack = fs.b_ineq - fs.A_ineq * x;
    for (Eigen::Index k = 0; k < slack.size(); ++k)
      if (slack[k] <= 1e-6 * (1.0 + std::abs(fs.b_ineq[k]))) {
        cols.push_back(fs.A_ineq.row(k).transpose());
        sign_constrained.push_back(true);
        col_names.push_back("x_ineq[" + std::to_string(k) + "]");
      }
  }
  for (Eigen::Index k = 0; k < fs.b_eq.size(); ++k) {
    cols.push_back(fs.A_eq.row(k).transpose());
    sign_constrained.push_back(false);
    col_names.push_back("x_eq[" + std::to_string(k) + "]");
  }
  for (Eigen::Index i = 0; i < fs.n(); ++i) {
    if (x[i] - fs.box_lower[i] <= 1e-6 * (1.0 + std::abs(fs.box_lower[i]))) {
      cols.push_back(-Vector::Unit(fs.n(), i));
      sign_constrained.push_back(true);
      col_names.push_back("x_box_lo[" + std::to_string(i) + "]");
    }
    if (fs.box_upper[i] - x[i] <= 1e-6 * (1.0 + std::abs(fs.box_upper[i]))) {
      cols.push_back(Vector::Unit(fs.n(), i));
      sign_constrained.push_back(true);
      col_names.push_back("x_box_up[" + std::to_string(i) + "]");
    }
  }

  Vector fitted = Vector::Zero(static_cast<Eigen::Index>(cols.size()));
  Vector stat_x = r0;
  if (!cols.empty()) {
    Matrix G(fs.n(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) G.col(static_cast<Eigen::Index>(k)) = cols[k];
    QpProblem fit = QpProblem::make(G.cols());
    fit.Q = G.transpose() * G + 1e-12 * Matrix::Identity(G.cols(), G.cols());
    fit.q = G.transpose() * r0;
    for (Eigen::Index k = 0; k < G.cols(); ++k)
      if (sign_constrained[static_cast<std::size_t>(k)]) fit.lower[k] = 0.0;
    QpSolution fsol = solve_qp(fit, qp_tol, 200);
    fitted = fsol.primal;
    stat_x = r0 + G * fitted;
  }

  Worst opt;
  for (Eigen::Index i = 0; i < stat_x.size(); ++i)
    opt.update(std::abs(stat_x[i]), "stationarity_x[" + std::to_string(i) + "]");

  // complementarity of the fitted first-stage multipliers
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (!sign_constrained[k]) continue;
    // slack of the matching row at x (active rows, so this is ~0)
    double slack = 0.0;
    const std::string& nm = col_names[k];
    if (nm.rfind("x_ineq", 0) == 0) {
      Eigen::Index row = std::stoi(nm.substr(7));
      slack = fs.b_ineq[row] - fs.A_ineq.row(row).dot(x);
    } else if (nm.rfind("x_box_lo", 0) == 0) {
      Eigen::Index i = std::stoi(nm.substr(9));
      slack = x[i] - fs.box_lower[i];
    } else if (nm.rfind("x_box_up", 0) == 0) {
      Eigen::Index i = std::stoi(nm.substr(9));
      slack = fs.box_upper[i] - x[i];
    }
    opt.update(std::abs(fitted[static_cast<Eigen::Index>(k)] * slack), "comp:" + nm);
  }

  double grad_y_inf = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const Scenario& sc = scenarios[s];
    double w = wts[static_cast<Eigen::Index>(s)];
    std::string tag = "s=" + std::to_string(s) + ":";
    Vector grad_y = w * (sc.b + sc.B.transpose() * x);
    if (grad_y.size()) grad_y_inf = std::max(grad_y_inf, grad_y.cwiseAbs().maxCoeff());
    Vector stat_y = grad_y;
    if (sc.h.size() > 0) stat_y.noalias() += sc.D.transpose() * (w * sols[s].dual_in);
    if (sc.d.size() > 0) stat_y.noalias() += sc.F.transpose() * (w * sols[s].dual_eq);
    stat_y -= w * sols[s].dual_lo;
    stat_y += w * sols[s].dual_up;
    for (Eigen::Index j = 0; j < stat_y.size(); ++j)
      opt.update(std::abs(stat_y[j]), tag + "stationarity_y[" + std::to_string(j) + "]");

    if (sc.h.size() > 0) {
      Vector slack = sc.h - sc.C * x - sc.D * ys[s];
      for (Eigen::Index k = 0; k < slack.size(); ++k)
        opt.update(std::abs(w * sols[s].dual_in[k] * slack[k]),
                   tag + "comp_joint[" + std::to_string(k) + "]");
    }
    for (Eigen::Index j = 0; j < sc.n2(); ++j) {
      opt.update(std::abs(w * sols[s].dual_lo[j] * (ys[s][j] - sc.y_lower[j])),
                 tag + "comp_y_lo[" + std::to_string(j) + "]");
      opt.update(std::abs(w * sols[s].dual_up[j] * (sc.y_upper[j] - ys[s][j])),
                 tag + "comp_y_up[" + std::to_string(j) + "]");
    }
  }

  rep.opt_abs = opt.value;
  rep.worst_opt_row = opt.row;

  // reference scale: violation magnitude at the instance initial point with
  // all second-stage variables at zero
  double feas_ref;
  {
    std::vector<Vector> zeros(S);
    for (std::size_t s = 0; s < S; ++s) zeros[s] = Vector::Zero(scenarios[s].n2());
    feas_ref = feasibility_violation(fs, scenarios, fs.x0, zeros).value;
  }
  rep.feas_rel = rep.feas_abs / std::max(1.0, feas_ref);
  rep.opt_rel = rep.opt_abs / std::max(1.0, std::max(grad_inf, grad_y_inf));
  rep.kkt_abs = std::max(rep.feas_abs, rep.opt_abs);
  rep.kkt_rel = std::max(rep.feas_rel, rep.opt_rel);
  return rep;
}

KktReport kkt_residuals(const FirstStage& fs, std::span<const Scenario> scenarios,
                        const Vector& x, const std::vector<Vector>& ys,
                        double qp_tol, int threads) {
  const std::size_t S = scenarios.size();
  if (ys.size() != S)
    throw std::invalid_argument("kkt_residuals: one y vector per scenario required");
  // duals from each scenario's QP solved at x; the supplied ys define the
  // point being checked. Outside dom psi (or with infeasible recourse) the
  // multipliers are taken as zero and the feasibility scan reports the gap.
  std::vector<ScenarioSolution> sols(S);
  parallel_for(static_cast<long long>(S), threads, [&](long long s) {
    auto idx = static_cast<std::size_t>(s);
    ScenarioSolution sol;
    try {
      RecourseResult r = evaluate_recourse(fs, scenarios[idx], x, qp_tol, static_cast<int>(s));
      if (r.finite()) sol = to_scenario_solution(r);
    } catch (const InfeasibleRecourseError&) {
    }
    const Scenario& sc = scenarios[idx];
    if (sol.dual_in.size() != sc.h.size()) sol.dual_in = Vector::Zero(sc.h.size());
    if (sol.dual_eq.size() != sc.d.size()) sol.dual_eq = Vector::Zero(sc.d.size());
    if (sol.dual_lo.size() != sc.n2()) sol.dual_lo = Vector::Zero(sc.n2());
    if (sol.dual_up.size() != sc.n2()) sol.dual_up = Vector::Zero(sc.n2());
    sol.y = ys[idx];
    sols[idx] = std::move(sol);
  });
  return kkt_residuals(fs, scenarios, x, sols, qp_tol, threads);
}

namespace {

double de_objective(const FirstStage& fs, std::span<const Scenario> scenarios,
                    const Vector& wts, const Vector& x, const std::vector<Vector>& ys) {
  double acc = fs.phi(x);
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    const Scenario& sc = scenarios[s];
    acc += wts[static_cast<Eigen::Index>(s)] *
           (sc.a.dot(x) + sc.b.dot(ys[s]) + x.dot(sc.B * ys[s]));
  }
  return acc;
}

OracleResult oracle_single_start(const FirstStage& fs, std::span<const Scenario> scenarios,
                               const Vector& wts, Vector x, const OracleOptions& opts,
                               int inner_threads) {
  const std::size_t S = scenarios.size();
  std::vector<Vector> ys(S);
  auto y_sweep = [&] {
    parallel_for(static_cast<long long>(S), inner_threads, [&](long long s) {
      auto idx = static_cast<std::size_t>(s);
      ys[idx] = evaluate_recourse(fs, scenarios[idx], x, opts.qp_tol, static_cast<int>(s)).y;
    });
  };

  // x block: phi plus the terms linear in x, subject to X and every
  // scenario's joint rows at the current ys
  auto x_block = [&]() {
    Eigen::Index extra = 0;
    for (const Scenario& sc : scenarios) extra += sc.h.size();
    QpProblem p = QpProblem::make(fs.n());
    p.Q = fs.P;
    p.q = fs.c;
    for (std::size_t s = 0; s < S; ++s)
      p.q.noalias() += wts[static_cast<Eigen::Index>(s)] *
                       (scenarios[s].a + scenarios[s].B * ys[s]);
    p.A_eq = fs.A_eq;
    p.b_eq = fs.b_eq;
    p.A_in = Matrix(fs.b_ineq.size() + extra, fs.n());
    p.b_in = Vector(fs.b_ineq.size() + extra);
    p.A_in.topRows(fs.b_ineq.size()) = fs.A_ineq;
    p.b_in.head(fs.b_ineq.size()) = fs.b_ineq;
    Eigen::Index row = fs.b_ineq.size();
    for (std::size_t s = 0; s < S; ++s) {
      const Scenario& sc = scenarios[s];
      if (sc.h.size() == 0) continue;
      p.A_in.middleRows(row, sc.h.size()) = sc.C;
      p.b_in.segment(row, sc.h.size()) = sc.h - sc.D * ys[s];
      row += sc.h.size();
    }
    p.lower = fs.box_lower;
    p.upper = fs.box_upper;
    QpSolution sol = solve_qp(p, opts.qp_tol, 200);
    if (sol.status != QpStatus::Optimal && sol.kkt_residual > 100.0 * opts.qp_tol)
      throw std::runtime_error("oracle_solve: x block QP did not converge");
    return sol.primal;
  };

  double f_prev = kInf;
  bool stationary = false;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    y_sweep();
    Vector x_prev = x;
    x = x_block();
    double f = de_objective(fs, scenarios, wts, x, ys);
    double move = (x - x_prev).cwiseAbs().maxCoeff();
    if (f_prev - f < opts.sweep_tol) {
      stationary = move <= 1e-7 * (1.0 + x.cwiseAbs().maxCoeff());
      break;
    }
    f_prev = f;
  }
  y_sweep();  // sync ys with the final x
  OracleResult out;
  out.best_x = x;
  out.best_objective = de_objective(fs, scenarios, wts, x, ys);
  out.block_stationary.push_back(stationary);
  return out;
}

}  // namespace

OracleResult oracle_solve(const FirstStage& fs, std::span<const Scenario> scenarios,
                          int n_starts, std::uint64_t seed, const OracleOptions& opts) {
  if (n_starts < 1) throw std::invalid_argument("oracle_solve: n_starts must be >= 1");
  Vector wts = normalized_weights(scenarios);

  std::vector<Vector> starts(static_cast<std::size_t>(n_starts));
  for (int k = 0; k < n_starts; ++k) {
    if (k < static_cast<int>(opts.initial_points.size())) {
      starts[static_cast<std::size_t>(k)] = opts.initial_points[static_cast<std::size_t>(k)];
    } else {
      Rng rng(derive_seed(seed, 0x5374 + static_cast<std::uint64_t>(k)));
      starts[static_cast<std::size_t>(k)] = sample_x(fs, rng, opts.qp_tol);
    }
  }

  std::vector<OracleResult> per_start(static_cast<std::size_t>(n_starts));
  int outer_threads = n_starts > 1 ? opts.threads : 1;
  int inner_threads = n_starts > 1 ? 1 : opts.threads;
  parallel_for(n_starts, outer_threads, [&](long long k) {
    per_start[static_cast<std::size_t>(k)] =
        oracle_single_start(fs, scenarios, wts, starts[static_cast<std::size_t>(k)], opts,
                            inner_threads);
  });

  OracleResult out;
  out.starts = n_starts;
  for (int k = 0; k < n_starts; ++k) {
    const OracleResult& r = per_start[static_cast<std::size_t>(k)];
    out.start_objectives.push_back(r.best_objective);
    out.block_stationary.push_back(r.block_stationary[0]);
    if (r.best_objective < out.best_objective) {
      out.best_objective = r.best_objective;
      out.best_x = r.best_x;
    }
  }
  return out;
}

double grid_bruteforce(const FirstStage& fs, std::span<const Scenario> scenarios,
                       double resolution, double qp_tol, int threads) {
  if (fs.n() > 2)
    throw std::invalid_argument("grid_bruteforce: toy instances only (n1 <= 2)");
  if (!(resolution > 0.0))
    throw std::invalid_argument("grid_bruteforce: resolution must be positive");

  auto axis = [&](Eigen::Index i) {
    std::vector<double> pts;
    double lo = fs.box_lower[i], hi = fs.box_upper[i];
    for (double v = lo; v < hi + 0.5 * resolution; v += resolution)
      pts.push_back(std::min(v, hi));
    if (pts.empty() || pts.back() < hi - 1e-12) pts.push_back(hi);
    return pts;
  };

  std::vector<Vector> grid;
  if (fs.n() == 1) {
    for (double v : axis(0)) grid.push_back(Vector::Constant(1, v));
  } else {
    auto ax0 = axis(0), ax1 = axis(1);
    for (double u : ax0)
      for (double v : ax1) {
        Vector p(2);
        p << u, v;
        grid.push_back(p);
      }
  }

  Vector wts = normalized_weights(scenarios);
  std::vector<double> vals(grid.size(), kInf);
  parallel_for(static_cast<long long>(grid.size()), threads, [&](long long g) {
    const Vector& x = grid[static_cast<std::size_t>(g)];
    if (fs.b_ineq.size() > 0 && !((fs.A_ineq * x - fs.b_ineq).array() <= 1e-12).all())
      return;
    if (fs.b_eq.size() > 0 && (fs.A_eq * x - fs.b_eq).cwiseAbs().maxCoeff() > 1e-9)
      return;
    double acc = fs.phi(x);
    try {
      for (std::size_t s = 0; s < scenarios.size(); ++s)
        acc += wts[static_cast<Eigen::Index>(s)] *
               evaluate_recourse(fs, scenarios[s], x, qp_tol, static_cast<int>(s)).value;
    } catch (const InfeasibleRecourseError&) {
      return;
    }
    vals[static_cast<std::size_t>(g)] = acc;
  });
  double best = kInf;
  for (double v : vals) best = std::min(best, v);
  return best;
}

SliceTable recourse_slice(const FirstStage& fs, const Scenario& sc,
                          const SliceSpec& spec, double qp_tol) {
  if (spec.axis_i < 0 || spec.axis_i >= fs.n())
    throw std::invalid_argument("recourse_slice: axis_i out of range");
  if (spec.axis_j >= static_cast<int>(fs.n()))
    throw std::invalid_argument("recourse_slice: axis_j out of range");
  if (spec.base.size() != fs.n())
    throw std::invalid_argument("recourse_slice: base point dimension mismatch");

  Vector xlo = fs.xbar_lower(), xhi = fs.xbar_upper();
  auto range = [&](int axis, double lo, double hi) {
    double a = std::isnan(lo) ? xlo[axis] : lo;
    double b = std::isnan(hi) ? xhi[axis] : hi;
    return std::pair<double, double>(a, b);
  };
  auto [ai, bi] = range(spec.axis_i, spec.lo_i, spec.hi_i);

  SliceTable table;
  table.two_d = spec.axis_j >= 0;

  auto value_at = [&](Vector x) {
    try {
      return evaluate_recourse(fs, sc, x, qp_tol).value;
    } catch (const InfeasibleRecourseError&) {
      return kInf;
    }
  };

  int ni = std::max(spec.n_i, 2);
  if (!table.two_d) {
    for (int k = 0; k < ni; ++k) {
      double t = ai + (bi - ai) * k / (ni - 1);
      Vector x = spec.base;
      x[spec.axis_i] = t;
      table.rows.push_back({t, 0.0, value_at(x)});
    }
    return table;
  }

  auto [aj, bj] = range(spec.axis_j, spec.lo_j, spec.hi_j);
  int nj = std::max(spec.n_j, 2);
  for (int k = 0; k < ni; ++k) {
    double ti = ai + (bi - ai) * k / (ni - 1);
    for (int l = 0; l < nj; ++l) {
      double tj = aj + (bj - aj) * l / (nj - 1);
      Vector x = spec.base;
      x[spec.axis_i] = ti;
      x[spec.axis_j] = tj;
      table.rows.push_back({ti, tj, value_at(x)});
    }
  }
  return table;
}

LipschitzEstimate probe_lipschitz(const FirstStage& fs, const Scenario& sc,
                                  int n_pairs, std::uint64_t seed, double qp_tol) {
  return estimate_lipschitz(fs, sc, n_pairs, seed, qp_tol);
}

}  // namespace dpme
