#include "dpme/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "dpme/parallel.hpp"

namespace dpme {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "Converged";
    case SolveStatus::MaxOuter: return "MaxOuter";
    case SolveStatus::InnerStall: return "InnerStall";
    case SolveStatus::RecourseInfeasible: return "RecourseInfeasible";
  }
  return "?";
}

SurrogateCut build_cut(const FirstStage& fs, const Scenario& sc, const Vector& anchor,
                       double gamma, double qp_tol, int scenario_id,
                       EnvelopeResult* envelope_out) {
  EnvelopeResult env = partial_moreau(fs, sc, anchor, gamma, qp_tol, scenario_id);
  SurrogateCut cut;
  cut.anchor = anchor;
  cut.gamma = gamma;
  cut.g_val = anchor.squaredNorm() / (2.0 * gamma) - env.value;
  cut.slope = env.prox_x / gamma + env.c_sub;
  cut.scenario_id = scenario_id;
  cut.weight = sc.weight;
  if (envelope_out) *envelope_out = std::move(env);
  return cut;
}

MasterResult solve_master(const FirstStage& fs, std::span<const SurrogateCut> cuts,
                          double gamma, double qp_tol) {
  if (cuts.empty()) throw std::invalid_argument("solve_master: no cuts");
  for (const SurrogateCut& c : cuts)
    if (c.gamma != gamma)
      throw std::invalid_argument("solve_master: cut gamma differs from master gamma");

  const Eigen::Index n = fs.n();
  double wsum = 0.0;
  for (const SurrogateCut& c : cuts) wsum += c.weight;
  const double scale = wsum > 0.0 ? 1.0 / wsum : 1.0 / static_cast<double>(cuts.size());

  QpProblem p = QpProblem::make(n);
  p.Q = fs.P + (1.0 / gamma) * Matrix::Identity(n, n);
  p.q = fs.c;
  double constant = 0.0;
  for (const SurrogateCut& c : cuts) {
    double w = (wsum > 0.0 ? c.weight : 1.0) * scale;
    p.q.noalias() -= w * c.slope;
    constant += w * (c.slope.dot(c.anchor) - c.g_val);  // dropped from the QP
  }
  p.A_in = fs.A_ineq;
  p.b_in = fs.b_ineq;
  p.A_eq = fs.A_eq;
  p.b_eq = fs.b_eq;
  p.lower = fs.box_lower;
  p.upper = fs.box_upper;

  QpSolution sol = solve_qp(p, qp_tol, 200);
  if (sol.status == QpStatus::Infeasible)
    throw std::runtime_error("solve_master: X is empty");
  if (sol.status != QpStatus::Optimal && sol.kkt_residual > 100.0 * qp_tol)
    throw std::runtime_error("solve_master: master QP did not converge");
  return {sol.primal, sol.objective + constant};
}

InnerResult inner_loop(const FirstStage& fs, std::span<const Scenario> scenarios,
                       const Vector& x_start, double gamma, double eps,
                       const SolverConfig& cfg) {
  const std::size_t S = scenarios.size();
  if (S == 0) throw std::invalid_argument("inner_loop: no scenarios");
  Vector wts = normalized_weights(scenarios);

  InnerResult res;
  Vector x = x_start;
  std::vector<SurrogateCut> cuts(S);
  std::vector<EnvelopeResult> envs(S);

  auto build_all = [&](const Vector& anchor) {
    parallel_for(static_cast<long long>(S), cfg.threads, [&](long long s) {
      auto idx = static_cast<std::size_t>(s);
      cuts[idx] = build_cut(fs, scenarios[idx], anchor, gamma, cfg.qp_tol,
                            static_cast<int>(s), &envs[idx]);
    });
  };

  for (int i = 0; i < cfg.max_inner; ++i) {
    build_all(x);
    double zeta_hat = fs.phi(x);
    for (std::size_t s = 0; s < S; ++s)
      zeta_hat += wts[static_cast<Eigen::Index>(s)] * envs[s].value;

    MasterResult m = solve_master(fs, cuts, gamma, cfg.qp_tol);
    double step = (m.x - x).norm();
    res.steps.push_back({zeta_hat, step, m.objective});
    x = m.x;
    res.iterations = i + 1;

    if (step <= eps * gamma) {
      res.x_next = x;
      res.final_step_norm = step;
      res.final_cuts = std::move(cuts);
      res.final_envelopes = std::move(envs);
      if (cfg.final_envelope_sweep) {
        std::vector<EnvelopeResult> exit_envs(S);
        parallel_for(static_cast<long long>(S), cfg.threads, [&](long long s) {
          auto idx = static_cast<std::size_t>(s);
          exit_envs[idx] = partial_moreau(fs, scenarios[idx], x, gamma, cfg.qp_tol,
                                          static_cast<int>(s));
        });
        double zh = fs.phi(x);
        for (std::size_t s = 0; s < S; ++s)
          zh += wts[static_cast<Eigen::Index>(s)] * exit_envs[s].value;
        res.zeta_hat_exit = zh;
      }
      return res;
    }
  }
  // theory guarantees finiteness; reaching the cap signals a bug or a
  // tolerance mismatch and is reported as a stall
  res.x_next = x;
  res.final_step_norm = res.steps.empty() ? 0.0 : res.steps.back().step_norm;
  res.final_cuts = std::move(cuts);
  res.final_envelopes = std::move(envs);
  res.stalled = true;
  return res;
}

CriticalityResult criticality_residual(const FirstStage& fs,
                                       std::span<const Scenario> scenarios,
                                       const Vector& x_next,
                                       std::span<const EnvelopeResult> envelopes,
                                       double gamma, const Vector* x_prev,
                                       double qp_tol) {
  if (envelopes.size() != scenarios.size())
    throw std::invalid_argument("criticality_residual: one envelope per scenario required");
  Vector wts = normalized_weights(scenarios);

  CriticalityResult out;
  Vector v = fs.phi_grad(x_next);
  for (std::size_t s = 0; s < envelopes.size(); ++s)
    v.noalias() += wts[static_cast<Eigen::Index>(s)] *
                   ((x_next - envelopes[s].prox_x) / gamma - envelopes[s].c_sub);
  out.v = v;
  out.cheap_certificate = x_prev ? (x_next - *x_prev).norm() / gamma : 0.0;

  // generators of N_X(x_next) plus, for boundary proximal points, the
  // touched Xbar box directions (they vanish when every prox is interior)
  std::vector<Vector> gens;
  std::vector<bool> sign_constrained;
  if (fs.b_ineq.size() > 0) {
    Vector slack = fs.b_ineq - fs.A_ineq * x_next;
    for (Eigen::Index k = 0; k < slack.size(); ++k)
      if (slack[k] <= 1e-7 * (1.0 + std::abs(fs.b_ineq[k]))) {
        gens.push_back(fs.A_ineq.row(k).transpose());
        sign_constrained.push_back(true);
      }
  }
  for (Eigen::Index k = 0; k < fs.b_eq.size(); ++k) {
    gens.push_back(fs.A_eq.row(k).transpose());
    sign_constrained.push_back(false);
  }
  for (Eigen::Index i = 0; i < fs.n(); ++i) {
    if (x_next[i] - fs.box_lower[i] <= 1e-7 * (1.0 + std::abs(fs.box_lower[i]))) {
      gens.push_back(-Vector::Unit(fs.n(), i));
      sign_constrained.push_back(true);
    }
    if (fs.box_upper[i] - x_next[i] <= 1e-7 * (1.0 + std::abs(fs.box_upper[i]))) {
      gens.push_back(Vector::Unit(fs.n(), i));
      sign_constrained.push_back(true);
    }
  }
  {
    Vector xb_lo = fs.xbar_lower(), xb_hi = fs.xbar_upper();
    std::vector<bool> lo_added(static_cast<std::size_t>(fs.n()), false);
    std::vector<bool> hi_added(static_cast<std::size_t>(fs.n()), false);
    for (const EnvelopeResult& e : envelopes) {
      for (Eigen::Index i = 0; i < fs.n(); ++i) {
        auto ui = static_cast<std::size_t>(i);
        if (!lo_added[ui] && e.prox_x[i] - xb_lo[i] <= 1e-9 * (1.0 + std::abs(xb_lo[i]))) {
          gens.push_back(-Vector::Unit(fs.n(), i));
          sign_constrained.push_back(true);
          lo_added[ui] = true;
        }
        if (!hi_added[ui] && xb_hi[i] - e.prox_x[i] <= 1e-9 * (1.0 + std::abs(xb_hi[i]))) {
          gens.push_back(Vector::Unit(fs.n(), i));
          sign_constrained.push_back(true);
          hi_added[ui] = true;
        }
      }
    }
  }

  if (gens.empty()) {
    out.normal_cone_dist = v.norm();
    return out;
  }
  Matrix G(fs.n(), static_cast<Eigen::Index>(gens.size()));
  for (std::size_t k = 0; k < gens.size(); ++k) G.col(static_cast<Eigen::Index>(k)) = gens[k];
  QpProblem fit = QpProblem::make(G.cols());
  fit.Q = G.transpose() * G + 1e-12 * Matrix::Identity(G.cols(), G.cols());
  fit.q = G.transpose() * v;
  for (Eigen::Index k = 0; k < G.cols(); ++k)
    if (sign_constrained[static_cast<std::size_t>(k)]) fit.lower[k] = 0.0;
  QpSolution sol = solve_qp(fit, qp_tol, 200);
  out.normal_cone_dist = (v + G * sol.primal).norm();
  return out;
}

namespace {

class FixedScenarioSource final : public ScenarioSource {
 public:
  explicit FixedScenarioSource(std::span<const Scenario> scenarios)
      : scenarios_(scenarios) {}
  std::span<const Scenario> working(int) override { return scenarios_; }
  std::span<const Scenario> reference() override { return scenarios_; }

 private:
  std::span<const Scenario> scenarios_;
};

}  // namespace

SolveReport solve_with_source(const FirstStage& fs, ScenarioSource& source,
                              const SolverConfig& cfg) {
  SolveReport rep;
  rep.config = cfg;
  rep.heuristic_continuous = source.heuristic();

  Vector x = fs.x0;
  double prev_obj = std::numeric_limits<double>::quiet_NaN();
  auto t0 = std::chrono::steady_clock::now();

  for (int nu = 0; nu < cfg.max_outer; ++nu) {
    double gamma = cfg.gamma0 * std::pow(cfg.gamma_decay, nu);
    double eps = cfg.eps0 * std::pow(cfg.eps_decay, nu);
    rep.gamma_final = gamma;
    rep.epsilon_final = eps;

    std::span<const Scenario> work = source.working(nu);
    InnerResult inner;
    try {
      inner = inner_loop(fs, work, x, gamma, eps, cfg);
    } catch (const InfeasibleRecourseError& e) {
      rep.status = SolveStatus::RecourseInfeasible;
      rep.offending_scenario = e.scenario_id;
      rep.message = e.what();
      rep.x_final = x;
      return rep;
    }
    x = inner.x_next;
    if (cfg.record_inner) rep.inner_steps.push_back(inner.steps);

    double crit_cheap = inner.final_step_norm / gamma;
    CriticalityResult crit =
        criticality_residual(fs, work, x, inner.final_envelopes, gamma, nullptr, cfg.qp_tol);

    if (inner.stalled) {
      rep.status = SolveStatus::InnerStall;
      rep.message = "inner loop hit max_inner";
      rep.x_final = x;
      rep.criticality = crit_cheap;
      rep.normal_cone_dist = crit.normal_cone_dist;
      return rep;
    }

    // full-pool diagnostics drive the stopping test
    std::span<const Scenario> ref = source.reference();
    std::vector<ScenarioSolution> sstage;
    double obj;
    try {
      obj = sample_average_objective(fs, ref, x, cfg.qp_tol, cfg.threads, &sstage);
    } catch (const InfeasibleRecourseError& e) {
      rep.status = SolveStatus::RecourseInfeasible;
      rep.offending_scenario = e.scenario_id;
      rep.message = e.what();
      rep.x_final = x;
      return rep;
    }
    KktReport kkt = kkt_residuals(fs, ref, x, sstage, cfg.qp_tol, cfg.threads);

    TraceRow row;
    row.outer = nu + 1;
    row.inner_iters = inner.iterations;
    row.S_nu = static_cast<long long>(work.size());
    row.gamma = gamma;
    row.epsilon = eps;
    row.objective = obj;
    row.feas_abs = kkt.feas_abs;
    row.feas_rel = kkt.feas_rel;
    row.kkt_abs = kkt.kkt_abs;
    row.kkt_rel = kkt.kkt_rel;
    row.criticality = crit_cheap;
    row.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.trace.push_back(row);

    rep.x_final = x;
    rep.objective = obj;
    rep.second_stage = std::move(sstage);
    rep.feas_abs = kkt.feas_abs;
    rep.feas_rel = kkt.feas_rel;
    rep.kkt_abs = kkt.kkt_abs;
    rep.kkt_rel = kkt.kkt_rel;
    rep.criticality = crit_cheap;
    rep.normal_cone_dist = crit.normal_cone_dist;
    rep.reference_scenarios = static_cast<long long>(ref.size());

    bool obj_settled = !std::isnan(prev_obj) &&
                       std::abs(prev_obj - obj) / std::max(1.0, std::abs(prev_obj)) <=
                           cfg.tol_obj_rel;
    bool feas_ok = kkt.feas_abs <= cfg.tol_feas_abs && kkt.feas_rel <= cfg.tol_feas_rel;
    prev_obj = obj;
    if (obj_settled && feas_ok) {
      rep.status = SolveStatus::Converged;
      return rep;
    }
  }
  rep.status = SolveStatus::MaxOuter;
  rep.message = "outer iteration cap reached";
  return rep;
}

SolveReport solve(const FirstStage& fs, std::span<const Scenario> scenarios,
                  const SolverConfig& cfg) {
  FixedScenarioSource src(scenarios);
  return solve_with_source(fs, src, cfg);
}

}  // namespace dpme
