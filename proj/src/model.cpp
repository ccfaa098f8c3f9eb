#include "dpme/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "dpme/parallel.hpp"
#include "dpme/rng.hpp"

namespace dpme {

bool FirstStage::in_xbar(const Vector& z, double tol) const {
  Vector lo = xbar_lower(), hi = xbar_upper();
  for (Eigen::Index i = 0; i < n(); ++i)
    if (z[i] < lo[i] - tol || z[i] > hi[i] + tol) return false;
  return true;
}

Vector default_xbar_margin(const Vector& lo, const Vector& hi) {
  Vector m(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i)
    m[i] = std::max(0.05 * (hi[i] - lo[i]), 1e-3);
  return m;
}

namespace {

void check_point_dim(const FirstStage& fs, const Vector& z, const char* who) {
  if (z.size() != fs.n()) throw std::invalid_argument(std::string(who) + ": first-stage dimension mismatch");
}

// second-stage LP at fixed constraint point xc and objective point zo
QpProblem recourse_lp(const Scenario& sc, const Vector& xc, const Vector& zo) {
  QpProblem lp = QpProblem::make(sc.n2());
  lp.q = sc.b + sc.B.transpose() * zo;
  lp.A_in = sc.D;
  lp.b_in = sc.h - sc.C * xc;
  lp.A_eq = sc.F;
  lp.b_eq = sc.d;
  lp.lower = sc.y_lower;
  lp.upper = sc.y_upper;
  return lp;
}

QpSolution solve_second_stage(const QpProblem& lp, double qp_tol, int scenario_id,
                              const char* who) {
  QpSolution sol = solve_qp(lp, qp_tol, 200);
  if (sol.status == QpStatus::Infeasible)
    throw InfeasibleRecourseError(scenario_id,
                                  std::string(who) + ": second-stage problem infeasible (scenario " +
                                      std::to_string(scenario_id) + ")");
  if (sol.status == QpStatus::Optimal) return sol;
  if (sol.status == QpStatus::MaxIter && sol.kkt_residual <= 100.0 * qp_tol) return sol;
  if (const char* dump = std::getenv("DPME_QP_DUMP")) {
    FILE* f = std::fopen(dump, "w");
    if (f) {
      auto put = [&](const char* name, const Matrix& m) {
        std::fprintf(f, "%s %ld %ld\n", name, (long)m.rows(), (long)m.cols());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          for (Eigen::Index j = 0; j < m.cols(); ++j) std::fprintf(f, "%a\n", m(i, j));
      };
      put("Q", lp.Q);
      put("q", lp.q);
      put("Aeq", lp.A_eq);
      put("beq", lp.b_eq);
      put("Ain", lp.A_in);
      put("bin", lp.b_in);
      put("lower", lp.lower);
      put("upper", lp.upper);
      std::fclose(f);
    }
  }
  throw std::runtime_error(std::string(who) + ": second-stage QP did not converge (" +
                           to_string(sol.status) + ", kkt=" + std::to_string(sol.kkt_residual) + ")");
}

}  // namespace

RecourseResult evaluate_recourse(const FirstStage& fs, const Scenario& sc,
                                 const Vector& z, double qp_tol, int scenario_id) {
  check_point_dim(fs, z, "evaluate_recourse");
  RecourseResult r;
  if (!fs.in_xbar(z)) return r;  // +inf marker
  QpProblem lp = recourse_lp(sc, z, z);
  r.qp = solve_second_stage(lp, qp_tol, scenario_id, "evaluate_recourse");
  r.y = r.qp.primal;
  r.value = sc.a.dot(z) + r.qp.objective;
  return r;
}

LiftedResult evaluate_lifted(const FirstStage& fs, const Scenario& sc,
                             const Vector& x, const Vector& z, double qp_tol,
                             int scenario_id) {
  check_point_dim(fs, x, "evaluate_lifted");
  check_point_dim(fs, z, "evaluate_lifted");
  LiftedResult r;
  if (!fs.in_xbar(x)) {
    r.value = kInf;
    return r;
  }
  if (!fs.in_xbar(z)) {
    r.value = -kInf;
    return r;
  }
  QpProblem lp = recourse_lp(sc, x, z);
  r.qp = solve_second_stage(lp, qp_tol, scenario_id, "evaluate_lifted");
  r.y = r.qp.primal;
  r.value = sc.a.dot(z) + r.qp.objective;
  return r;
}

EnvelopeResult partial_moreau(const FirstStage& fs, const Scenario& sc,
                              const Vector& z, double gamma, double qp_tol,
                              int scenario_id) {
  check_point_dim(fs, z, "partial_moreau");
  if (!(gamma > 0.0)) throw std::invalid_argument("partial_moreau: gamma must be positive");
  const Eigen::Index n1 = fs.n(), n2 = sc.n2();
  const Eigen::Index mj = sc.h.size(), me = sc.d.size();

  QpProblem p = QpProblem::make(n1 + n2);
  p.Q.topLeftCorner(n1, n1) = (1.0 / gamma) * Matrix::Identity(n1, n1);
  p.q.head(n1) = -z / gamma;
  p.q.tail(n2) = sc.b + sc.B.transpose() * z;
  p.A_in = Matrix::Zero(mj, n1 + n2);
  if (mj > 0) {
    p.A_in.leftCols(n1) = sc.C;
    p.A_in.rightCols(n2) = sc.D;
  }
  p.b_in = sc.h;
  p.A_eq = Matrix::Zero(me, n1 + n2);
  if (me > 0) p.A_eq.rightCols(n2) = sc.F;
  p.b_eq = sc.d;
  p.lower.head(n1) = fs.xbar_lower();
  p.upper.head(n1) = fs.xbar_upper();
  p.lower.tail(n2) = sc.y_lower;
  p.upper.tail(n2) = sc.y_upper;

  EnvelopeResult e;
  e.qp = solve_second_stage(p, qp_tol, scenario_id, "partial_moreau");
  e.prox_x = e.qp.primal.head(n1);
  e.y_opt = e.qp.primal.tail(n2);
  e.c_sub = -(sc.a + sc.B * e.y_opt);
  e.value = e.qp.objective + z.squaredNorm() / (2.0 * gamma) + sc.a.dot(z);
  return e;
}

Vector project_onto_x(const FirstStage& fs, const Vector& point, double qp_tol) {
  QpProblem p = QpProblem::make(fs.n());
  p.Q = Matrix::Identity(fs.n(), fs.n());
  p.q = -point;
  p.A_in = fs.A_ineq;
  p.b_in = fs.b_ineq;
  p.A_eq = fs.A_eq;
  p.b_eq = fs.b_eq;
  p.lower = fs.box_lower;
  p.upper = fs.box_upper;
  QpSolution sol = solve_qp(p, qp_tol, 200);
  if (sol.status == QpStatus::Infeasible)
    throw std::runtime_error("project_onto_x: X is empty");
  return sol.primal;
}

Vector sample_x(const FirstStage& fs, Rng& rng, double qp_tol) {
  Vector r(fs.n());
  for (Eigen::Index i = 0; i < fs.n(); ++i)
    r[i] = rng.uniform(fs.box_lower[i], fs.box_upper[i]);
  bool inside = ((fs.A_ineq * r - fs.b_ineq).array() <= 0.0).all() &&
                (fs.b_eq.size() == 0 ||
                 (fs.A_eq * r - fs.b_eq).cwiseAbs().maxCoeff() <= 1e-12);
  return inside ? r : project_onto_x(fs, r, qp_tol);
}

Vector normalized_weights(std::span<const Scenario> scenarios) {
  Vector w(static_cast<Eigen::Index>(scenarios.size()));
  for (std::size_t s = 0; s < scenarios.size(); ++s)
    w[static_cast<Eigen::Index>(s)] = scenarios[s].weight;
  double total = w.sum();
  if (!(total > 0.0)) {
    w.setConstant(1.0 / static_cast<double>(scenarios.size()));
    return w;
  }
  return w / total;
}

ScenarioSolution to_scenario_solution(const RecourseResult& r) {
  ScenarioSolution s;
  s.value = r.value;
  s.y = r.y;
  s.dual_in = r.qp.dual_in;
  s.dual_eq = r.qp.dual_eq;
  s.dual_lo = r.qp.dual_lower;
  s.dual_up = r.qp.dual_upper;
  return s;
}

double sample_average_objective(const FirstStage& fs,
                                std::span<const Scenario> scenarios,
                                const Vector& x, double qp_tol, int threads,
                                std::vector<ScenarioSolution>* out) {
  const std::size_t S = scenarios.size();
  std::vector<ScenarioSolution> sols(S);
  parallel_for(static_cast<long long>(S), threads, [&](long long s) {
    RecourseResult r = evaluate_recourse(fs, scenarios[static_cast<std::size_t>(s)], x,
                                         qp_tol, static_cast<int>(s));
    sols[static_cast<std::size_t>(s)] = to_scenario_solution(r);
  });
  Vector w = normalized_weights(scenarios);
  double acc = 0.0;
  for (std::size_t s = 0; s < S; ++s) acc += w[static_cast<Eigen::Index>(s)] * sols[s].value;
  if (out) *out = std::move(sols);
  return fs.phi(x) + acc;
}

LipschitzEstimate estimate_lipschitz(const FirstStage& fs, const Scenario& sc,
                                     int n_pairs, std::uint64_t seed,
                                     double qp_tol) {
  Rng rng(derive_seed(seed, 0x4c697073ULL));
  Vector lo = fs.xbar_lower(), hi = fs.xbar_upper();
  auto xbar_point = [&] {
    Vector v(fs.n());
    for (Eigen::Index i = 0; i < fs.n(); ++i) v[i] = rng.uniform(lo[i], hi[i]);
    return v;
  };
  // probing only; samples where the lifted problem is infeasible are skipped
  auto lifted_or_nan = [&](const Vector& x, const Vector& z) {
    try {
      return evaluate_lifted(fs, sc, x, z, qp_tol).value;
    } catch (const InfeasibleRecourseError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  LipschitzEstimate est;
  for (int k = 0; k < n_pairs; ++k) {
    Vector x1 = xbar_point(), x2 = xbar_point();
    Vector z = sample_x(fs, rng, qp_tol);
    double dx = (x1 - x2).norm();
    if (dx > 1e-9) {
      double f1 = lifted_or_nan(x1, z);
      double f2 = lifted_or_nan(x2, z);
      if (std::isfinite(f1) && std::isfinite(f2))
        est.kappa1 = std::max(est.kappa1, std::abs(f1 - f2) / dx);
    }
    Vector x = xbar_point();
    Vector z1 = sample_x(fs, rng, qp_tol), z2 = sample_x(fs, rng, qp_tol);
    double dz = (z1 - z2).norm();
    if (dz > 1e-9) {
      double g1 = lifted_or_nan(x, z1);
      double g2 = lifted_or_nan(x, z2);
      if (std::isfinite(g1) && std::isfinite(g2))
        est.kappa2 = std::max(est.kappa2, std::abs(g1 - g2) / dz);
    }
  }
  return est;
}

ValidationReport validate_instance(const FirstStage& fs,
                                   std::span<const Scenario> scenarios,
                                   int n_probe, std::uint64_t seed,
                                   double qp_tol, int threads) {
  ValidationReport rep;
  rep.probes = n_probe;
  for (const Scenario& sc : scenarios) rep.weight_sum += sc.weight;

  {
    QpProblem feas = QpProblem::make(fs.n());
    feas.A_in = fs.A_ineq;
    feas.b_in = fs.b_ineq;
    feas.A_eq = fs.A_eq;
    feas.b_eq = fs.b_eq;
    feas.lower = fs.box_lower;
    feas.upper = fs.box_upper;
    rep.x_nonempty = solve_qp(feas, qp_tol, 200).status != QpStatus::Infeasible;
  }

  Vector lo = fs.xbar_lower(), hi = fs.xbar_upper();
  std::vector<Vector> probes(static_cast<std::size_t>(n_probe));
  {
    Rng rng(derive_seed(seed, 0x50726f62ULL));
    for (int p = 0; p < n_probe; ++p) {
      Vector v(fs.n());
      for (Eigen::Index i = 0; i < fs.n(); ++i) v[i] = rng.uniform(lo[i], hi[i]);
      probes[static_cast<std::size_t>(p)] = std::move(v);
    }
  }
  std::vector<std::vector<int>> failed(static_cast<std::size_t>(n_probe));
  parallel_for(n_probe, threads, [&](long long p) {
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
      try {
        evaluate_recourse(fs, scenarios[s], probes[static_cast<std::size_t>(p)], qp_tol,
                          static_cast<int>(s));
      } catch (const InfeasibleRecourseError&) {
        failed[static_cast<std::size_t>(p)].push_back(static_cast<int>(s));
      }
    }
  });
  for (int p = 0; p < n_probe; ++p)
    for (int s : failed[static_cast<std::size_t>(p)])
      rep.failures.push_back({p, s});

  if (rep.x_nonempty && !scenarios.empty()) {
    // sampled moduli on a scenario subsample; enough for reporting
    std::size_t step = std::max<std::size_t>(1, scenarios.size() / 8);
    int pairs = std::max(4, n_probe / 4);
    for (std::size_t s = 0; s < scenarios.size(); s += step) {
      LipschitzEstimate est =
          estimate_lipschitz(fs, scenarios[s], pairs, derive_seed(seed, 0xAA00 + s), qp_tol);
      rep.kappa1_hat = std::max(rep.kappa1_hat, est.kappa1);
      rep.kappa2_hat = std::max(rep.kappa2_hat, est.kappa2);
    }
  }
  return rep;
}

}  // namespace dpme
