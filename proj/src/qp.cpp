#include "dpme/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <vector>

namespace dpme {

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::Unbounded: return "Unbounded";
    case QpStatus::MaxIter: return "MaxIter";
  }
  return "?";
}

QpProblem QpProblem::make(Eigen::Index n) {
  QpProblem p;
  p.Q = Matrix::Zero(n, n);
  p.q = Vector::Zero(n);
  p.A_eq = Matrix(0, n);
  p.b_eq = Vector(0);
  p.A_in = Matrix(0, n);
  p.b_in = Vector(0);
  p.lower = Vector::Constant(n, -kInf);
  p.upper = Vector::Constant(n, kInf);
  return p;
}

double qp_objective(const QpProblem& p, const Vector& v) {
  return 0.5 * v.dot(p.Q * v) + p.q.dot(v);
}

double qp_kkt_residual(const QpProblem& p, const QpSolution& s) {
  const Eigen::Index n = p.num_vars();
  const Vector& v = s.primal;
  Vector stat = p.Q * v + p.q;
  if (p.num_eq() > 0) stat.noalias() += p.A_eq.transpose() * s.dual_eq;
  if (p.num_in() > 0) stat.noalias() += p.A_in.transpose() * s.dual_in;
  stat -= s.dual_lower;
  stat += s.dual_upper;
  double r = stat.cwiseAbs().maxCoeff();

  if (p.num_eq() > 0) r = std::max(r, (p.A_eq * v - p.b_eq).cwiseAbs().maxCoeff());
  if (p.num_in() > 0) {
    Vector slack = p.b_in - p.A_in * v;
    r = std::max(r, std::max(0.0, -slack.minCoeff()));
    r = std::max(r, slack.cwiseProduct(s.dual_in).cwiseAbs().maxCoeff());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(p.lower[i])) {
      r = std::max(r, p.lower[i] - v[i]);
      r = std::max(r, std::abs(s.dual_lower[i] * (v[i] - p.lower[i])));
    }
    if (std::isfinite(p.upper[i])) {
      r = std::max(r, v[i] - p.upper[i]);
      r = std::max(r, std::abs(s.dual_upper[i] * (p.upper[i] - v[i])));
    }
  }
  return r;
}

namespace {

void validate_problem(const QpProblem& p) {
  const Eigen::Index n = p.num_vars();
  if (n < 1) throw std::invalid_argument("solve_qp: problem has no variables");
  if (p.Q.rows() != n || p.Q.cols() != n)
    throw std::invalid_argument("solve_qp: Q dimension mismatch");
  if (p.A_eq.rows() != p.b_eq.size() || (p.A_eq.rows() > 0 && p.A_eq.cols() != n))
    throw std::invalid_argument("solve_qp: equality block dimension mismatch");
  if (p.A_in.rows() != p.b_in.size() || (p.A_in.rows() > 0 && p.A_in.cols() != n))
    throw std::invalid_argument("solve_qp: inequality block dimension mismatch");
  if (p.lower.size() != n || p.upper.size() != n)
    throw std::invalid_argument("solve_qp: bound dimension mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    if (p.lower[i] > p.upper[i])
      throw std::invalid_argument("solve_qp: lower bound exceeds upper bound");

  double qmax = p.Q.cwiseAbs().maxCoeff();
  double asym = (p.Q - p.Q.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, qmax))
    throw std::invalid_argument("solve_qp: Q is not symmetric");

  // PSD screen via a pivoted symmetric factorization. All curvatures this
  // project produces are (1/gamma) I plus PSD terms, so a pivot below the
  // threshold indicates a caller bug.
  if (qmax > 0.0) {
    Eigen::LDLT<Matrix> ldlt(0.5 * (p.Q + p.Q.transpose()));
    if (ldlt.vectorD().minCoeff() < -1e-10 * std::max(1.0, qmax))
      throw std::invalid_argument("solve_qp: Q has negative curvature");
  }
}

struct Work {
  // internal equality system = caller rows plus pinned coordinates
  Matrix Aeq;
  Vector beq;
  std::vector<Eigen::Index> pinned;  // coordinates with lower == upper
  std::vector<Eigen::Index> idx_lo;  // finite, non-pinned lower bounds
  std::vector<Eigen::Index> idx_up;  // finite, non-pinned upper bounds
};

Work build_work(const QpProblem& p) {
  const Eigen::Index n = p.num_vars();
  Work w;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool lo = std::isfinite(p.lower[i]);
    bool up = std::isfinite(p.upper[i]);
    if (lo && up && p.upper[i] - p.lower[i] <= 1e-12 * (1.0 + std::abs(p.lower[i]))) {
      w.pinned.push_back(i);
      continue;
    }
    if (lo) w.idx_lo.push_back(i);
    if (up) w.idx_up.push_back(i);
  }
  const Eigen::Index meq = p.num_eq();
  const Eigen::Index mp = static_cast<Eigen::Index>(w.pinned.size());
  w.Aeq = Matrix::Zero(meq + mp, n);
  w.beq = Vector::Zero(meq + mp);
  if (meq > 0) {
    w.Aeq.topRows(meq) = p.A_eq;
    w.beq.head(meq) = p.b_eq;
  }
  for (Eigen::Index k = 0; k < mp; ++k) {
    w.Aeq(meq + k, w.pinned[static_cast<std::size_t>(k)]) = 1.0;
    w.beq[meq + k] = p.lower[w.pinned[static_cast<std::size_t>(k)]];
  }
  return w;
}

double step_to_boundary(const Vector& x, const Vector& dx) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (dx[i] < 0.0) a = std::min(a, -x[i] / dx[i]);
  return a;
}

struct IpmState {
  Vector v, y, z, s, wl, wu;
};

QpSolution extract(const QpProblem& p, const Work& w, const IpmState& st) {
  const Eigen::Index n = p.num_vars();
  const Eigen::Index meq = p.num_eq();
  QpSolution sol;
  sol.primal = st.v;
  sol.dual_eq = st.y.head(meq);
  sol.dual_in = st.z;
  sol.dual_lower = Vector::Zero(n);
  sol.dual_upper = Vector::Zero(n);
  for (std::size_t k = 0; k < w.idx_lo.size(); ++k)
    sol.dual_lower[w.idx_lo[k]] = st.wl[static_cast<Eigen::Index>(k)];
  for (std::size_t k = 0; k < w.idx_up.size(); ++k)
    sol.dual_upper[w.idx_up[k]] = st.wu[static_cast<Eigen::Index>(k)];
  // Pinned coordinates carry an internal equality multiplier; split it by
  // sign into the two bound duals so complementarity holds exactly.
  for (std::size_t k = 0; k < w.pinned.size(); ++k) {
    double mult = st.y[meq + static_cast<Eigen::Index>(k)];
    sol.dual_upper[w.pinned[k]] = std::max(mult, 0.0);
    sol.dual_lower[w.pinned[k]] = std::max(-mult, 0.0);
  }
  sol.objective = qp_objective(p, sol.primal);
  sol.kkt_residual = qp_kkt_residual(p, sol);
  return sol;
}

QpSolution solve_qp_impl(const QpProblem& p, double tol, int max_iter, bool phase1);

// Active-set cleanup for the degenerate endgame: pin the rows whose dual
// dominates the slack, solve the reduced KKT system exactly, and accept the
// result only if it verifies. Rank-revealing LU copes with the redundant
// active rows degenerate LPs produce.
bool try_polish(const QpProblem& p, const Work& w, const IpmState& st, double tol,
                QpSolution& out) {
  const Eigen::Index n = p.num_vars();
  const Eigen::Index meq = p.num_eq();
  const Eigen::Index min = p.num_in();

  std::vector<Eigen::Index> act_in, act_lo, act_up;
  if (min > 0) {
    for (Eigen::Index i = 0; i < min; ++i)
      if (st.z[i] >= st.s[i]) act_in.push_back(i);
  }
  for (std::size_t k = 0; k < w.idx_lo.size(); ++k) {
    Eigen::Index i = w.idx_lo[k];
    if (st.wl[static_cast<Eigen::Index>(k)] >= st.v[i] - p.lower[i]) act_lo.push_back(i);
  }
  for (std::size_t k = 0; k < w.idx_up.size(); ++k) {
    Eigen::Index i = w.idx_up[k];
    if (st.wu[static_cast<Eigen::Index>(k)] >= p.upper[i] - st.v[i]) act_up.push_back(i);
  }

  const Eigen::Index me = w.Aeq.rows();
  const Eigen::Index ma = me + static_cast<Eigen::Index>(act_in.size() + act_lo.size() +
                                                         act_up.size());
  Matrix A(ma, n);
  Vector b(ma);
  A.topRows(me) = w.Aeq;
  b.head(me) = w.beq;
  Eigen::Index r = me;
  for (Eigen::Index i : act_in) {
    A.row(r) = p.A_in.row(i);
    b[r++] = p.b_in[i];
  }
  for (Eigen::Index i : act_lo) {
    A.row(r).setZero();
    A(r, i) = 1.0;
    b[r++] = p.lower[i];
  }
  for (Eigen::Index i : act_up) {
    A.row(r).setZero();
    A(r, i) = 1.0;
    b[r++] = p.upper[i];
  }

  Matrix K = Matrix::Zero(n + ma, n + ma);
  K.topLeftCorner(n, n) = p.Q;
  K.topRightCorner(n, ma) = A.transpose();
  K.bottomLeftCorner(ma, n) = A;
  Vector rhs(n + ma);
  rhs.head(n) = -p.q;
  rhs.tail(ma) = b;
  Eigen::FullPivLU<Matrix> lu(K);
  lu.setThreshold(1e-10);
  Vector sol = lu.solve(rhs);
  if (!sol.allFinite()) return false;
  double consistency = (K * sol - rhs).cwiseAbs().maxCoeff();
  if (std::getenv("DPME_QP_DEBUG"))
    std::fprintf(stderr, "polish: ma=%ld rank=%ld consistency=%.3e\n", (long)ma,
                 (long)lu.rank(), consistency);
  if (consistency > 0.1 * tol * (1.0 + rhs.cwiseAbs().maxCoeff()))
    return false;  // inconsistent active set

  QpSolution cand;
  cand.primal = sol.head(n);
  cand.dual_eq = sol.segment(n, meq);
  cand.dual_in = Vector::Zero(min);
  cand.dual_lower = Vector::Zero(n);
  cand.dual_upper = Vector::Zero(n);
  Eigen::Index off = n + me;
  for (Eigen::Index i : act_in) cand.dual_in[i] = sol[off++];
  for (Eigen::Index i : act_lo) cand.dual_lower[i] = -sol[off++];
  for (Eigen::Index i : act_up) cand.dual_upper[i] = sol[off++];
  for (std::size_t k = 0; k < w.pinned.size(); ++k) {
    double mult = sol[n + p.num_eq() + static_cast<Eigen::Index>(k)];
    cand.dual_upper[w.pinned[k]] = std::max(mult, 0.0);
    cand.dual_lower[w.pinned[k]] = std::max(-mult, 0.0);
  }
  // negative multipliers mean the active-set guess was wrong
  double dual_floor = std::min({cand.dual_in.size() ? cand.dual_in.minCoeff() : 0.0,
                                cand.dual_lower.minCoeff(), cand.dual_upper.minCoeff()});
  if (std::getenv("DPME_QP_DEBUG"))
    std::fprintf(stderr, "polish: dual_floor=%.3e\n", dual_floor);
  if (dual_floor < -tol) return false;
  cand.dual_in = cand.dual_in.cwiseMax(0.0);
  cand.dual_lower = cand.dual_lower.cwiseMax(0.0);
  cand.dual_upper = cand.dual_upper.cwiseMax(0.0);
  cand.objective = qp_objective(p, cand.primal);
  cand.kkt_residual = qp_kkt_residual(p, cand);
  if (std::getenv("DPME_QP_DEBUG"))
    std::fprintf(stderr, "polish: kkt=%.3e\n", cand.kkt_residual);
  if (cand.kkt_residual > tol) return false;
  out = cand;
  return true;
}

// Elastic feasibility LP: minimize total violation of the equality and
// inequality rows with bounds kept hard. Always feasible, bounded below by
// zero; its optimum certifies (in)feasibility of the original rows.
double elastic_violation(const QpProblem& p, double tol, int max_iter) {
  const Eigen::Index n = p.num_vars();
  const Eigen::Index meq = p.num_eq();
  const Eigen::Index min = p.num_in();
  const Eigen::Index ne = n + 2 * meq + min;
  QpProblem e = QpProblem::make(ne);
  e.q.segment(n, 2 * meq + min).setOnes();
  e.A_eq = Matrix::Zero(meq, ne);
  e.b_eq = p.b_eq;
  if (meq > 0) {
    e.A_eq.leftCols(n) = p.A_eq;
    e.A_eq.block(0, n, meq, meq) = Matrix::Identity(meq, meq);
    e.A_eq.block(0, n + meq, meq, meq) = -Matrix::Identity(meq, meq);
  }
  e.A_in = Matrix::Zero(min, ne);
  e.b_in = p.b_in;
  if (min > 0) {
    e.A_in.leftCols(n) = p.A_in;
    e.A_in.block(0, n + 2 * meq, min, min) = -Matrix::Identity(min, min);
  }
  e.lower.head(n) = p.lower;
  e.upper.head(n) = p.upper;
  e.lower.tail(2 * meq + min).setZero();
  QpSolution sol = solve_qp_impl(e, tol, std::max(max_iter, 200), /*phase1=*/true);
  if (sol.status != QpStatus::Optimal) return -1.0;  // no certificate
  return sol.objective;
}

QpSolution solve_qp_impl(const QpProblem& p, double tol, int max_iter, bool phase1) {
  validate_problem(p);
  if (tol <= 0.0) throw std::invalid_argument("solve_qp: tol must be positive");

  const Eigen::Index n = p.num_vars();
  const Eigen::Index min = p.num_in();
  Work w = build_work(p);
  const Eigen::Index me = w.Aeq.rows();
  const Eigen::Index nl = static_cast<Eigen::Index>(w.idx_lo.size());
  const Eigen::Index nu = static_cast<Eigen::Index>(w.idx_up.size());
  const Eigen::Index m_comp = min + nl + nu;

  IpmState st;
  st.v = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    bool lo = std::isfinite(p.lower[i]);
    bool up = std::isfinite(p.upper[i]);
    if (lo && up)
      st.v[i] = 0.5 * (p.lower[i] + p.upper[i]);
    else if (lo)
      st.v[i] = p.lower[i] + 1.0;
    else if (up)
      st.v[i] = p.upper[i] - 1.0;
  }
  st.y = Vector::Zero(me);
  st.z = Vector::Ones(min);
  st.s = Vector::Ones(min);
  if (min > 0) {
    Vector slack0 = p.b_in - p.A_in * st.v;
    for (Eigen::Index i = 0; i < min; ++i) st.s[i] = std::max(slack0[i], 1.0);
  }
  st.wl = Vector::Ones(nl);
  st.wu = Vector::Ones(nu);

  auto gap_lo = [&](const Vector& v) {
    Vector g(nl);
    for (Eigen::Index k = 0; k < nl; ++k) g[k] = v[w.idx_lo[static_cast<std::size_t>(k)]] - p.lower[w.idx_lo[static_cast<std::size_t>(k)]];
    return g;
  };
  auto gap_up = [&](const Vector& v) {
    Vector g(nu);
    for (Eigen::Index k = 0; k < nu; ++k) g[k] = p.upper[w.idx_up[static_cast<std::size_t>(k)]] - v[w.idx_up[static_cast<std::size_t>(k)]];
    return g;
  };

  // keep strictly interior wherever a bound exists
  {
    for (Eigen::Index k = 0; k < nl; ++k) {
      Eigen::Index i = w.idx_lo[static_cast<std::size_t>(k)];
      double span = std::isfinite(p.upper[i]) ? p.upper[i] - p.lower[i] : 2.0;
      st.v[i] = std::max(st.v[i], p.lower[i] + std::min(1.0, 0.25 * span));
    }
    for (Eigen::Index k = 0; k < nu; ++k) {
      Eigen::Index i = w.idx_up[static_cast<std::size_t>(k)];
      double span = std::isfinite(p.lower[i]) ? p.upper[i] - p.lower[i] : 2.0;
      st.v[i] = std::min(st.v[i], p.upper[i] - std::min(1.0, 0.25 * span));
    }
  }

  QpSolution best = extract(p, w, st);
  IpmState best_state = st;
  double best_err = best.kkt_residual;
  int stall = 0;
  bool diverged = false;
  const double v_cap = 1e10 * (1.0 + st.v.cwiseAbs().maxCoeff());

  // Pure equality-constrained problem: one Newton solve.
  if (m_comp == 0) {
    Matrix K = Matrix::Zero(n + me, n + me);
    K.topLeftCorner(n, n) = p.Q + 1e-13 * Matrix::Identity(n, n);
    K.topRightCorner(n, me) = w.Aeq.transpose();
    K.bottomLeftCorner(me, n) = w.Aeq;
    K.bottomRightCorner(me, me) = -1e-13 * Matrix::Identity(me, me);
    Vector rhs(n + me);
    rhs.head(n) = -p.q;
    rhs.tail(me) = w.beq;
    Vector sol = Eigen::PartialPivLU<Matrix>(K).solve(rhs);
    st.v = sol.head(n);
    st.y = sol.tail(me);
    QpSolution out = extract(p, w, st);
    out.iterations = 1;
    out.status = out.kkt_residual <= tol ? QpStatus::Optimal : QpStatus::MaxIter;
    return out;
  }

  int iter = 0;
  for (; iter < max_iter; ++iter) {
    Vector gl = gap_lo(st.v);
    Vector gu = gap_up(st.v);

    Vector r_d = p.Q * st.v + p.q;
    if (me > 0) r_d.noalias() += w.Aeq.transpose() * st.y;
    if (min > 0) r_d.noalias() += p.A_in.transpose() * st.z;
    for (Eigen::Index k = 0; k < nl; ++k) r_d[w.idx_lo[static_cast<std::size_t>(k)]] -= st.wl[k];
    for (Eigen::Index k = 0; k < nu; ++k) r_d[w.idx_up[static_cast<std::size_t>(k)]] += st.wu[k];
    Vector r_p = me > 0 ? Vector(w.Aeq * st.v - w.beq) : Vector(0);
    Vector r_i = min > 0 ? Vector(p.A_in * st.v + st.s - p.b_in) : Vector(0);

    double mu = (st.z.dot(st.s) + st.wl.dot(gl) + st.wu.dot(gu)) /
                static_cast<double>(m_comp);

    {
      QpSolution cand = extract(p, w, st);
      if (std::getenv("DPME_QP_DEBUG"))
        std::fprintf(stderr, "iter %3d  kkt %.3e  mu %.3e  rd %.2e rp %.2e ri %.2e\n",
                     iter, cand.kkt_residual, mu,
                     r_d.cwiseAbs().maxCoeff(),
                     me ? r_p.cwiseAbs().maxCoeff() : 0.0,
                     min ? r_i.cwiseAbs().maxCoeff() : 0.0);
      if (cand.kkt_residual <= tol) {
        cand.status = QpStatus::Optimal;
        cand.iterations = iter;
        return cand;
      }
      if (cand.kkt_residual < 0.999 * best_err) {
        best = cand;
        best_state = st;
        best_err = cand.kkt_residual;
        stall = 0;
      } else if (++stall > 40) {
        break;
      }
      if (st.v.cwiseAbs().maxCoeff() > v_cap) {
        diverged = true;
        break;
      }
      // endgame: the active set is usually identified well before the last
      // digits of complementarity converge; one exact reduced solve both
      // finishes early and sidesteps the ill-conditioned final iterations
      if (mu <= 1e3 * tol || cand.kkt_residual <= 1e3 * tol) {
        QpSolution polished;
        if (try_polish(p, w, st, tol, polished)) {
          polished.status = QpStatus::Optimal;
          polished.iterations = iter;
          return polished;
        }
      }
    }

    // Augmented Newton system: the inequality-dual block stays explicit
    // (triangular elimination through tiny slacks amplifies solve error by
    // 1/s, which is what stalls degenerate LPs). Bound barriers enter as
    // diagonal terms, which pivoting handles well.
    Matrix Hb = p.Q;
    for (Eigen::Index k = 0; k < nl; ++k)
      Hb(w.idx_lo[static_cast<std::size_t>(k)], w.idx_lo[static_cast<std::size_t>(k)]) +=
          st.wl[k] / gl[k];
    for (Eigen::Index k = 0; k < nu; ++k)
      Hb(w.idx_up[static_cast<std::size_t>(k)], w.idx_up[static_cast<std::size_t>(k)]) +=
          st.wu[k] / gu[k];

    Vector dv, dy, dz, ds, dwl, dwu;
    Vector dgl(nl), dgu(nu);
    double ap = 0.0, ad = 0.0;
    bool finite_step = false;
    double reg = 1e-14 * (1.0 + p.Q.diagonal().cwiseAbs().maxCoeff());
    const Eigen::Index dim = n + me + min;
    for (int attempt = 0; attempt < 4 && !finite_step; ++attempt, reg *= 1e8) {
      Matrix K = Matrix::Zero(dim, dim);
      K.topLeftCorner(n, n) = Hb + reg * Matrix::Identity(n, n);
      if (me > 0) {
        K.block(0, n, n, me) = w.Aeq.transpose();
        K.block(n, 0, me, n) = w.Aeq;
        K.block(n, n, me, me) = -reg * Matrix::Identity(me, me);
      }
      if (min > 0) {
        K.block(0, n + me, n, min) = p.A_in.transpose();
        K.block(n + me, 0, min, n) = p.A_in;
        K.block(n + me, n + me, min, min).diagonal() = -(st.s.cwiseQuotient(st.z));
      }
      Eigen::PartialPivLU<Matrix> lu(K);

      auto solve_newton = [&](const Vector& r_zs, const Vector& r_wl, const Vector& r_wu) {
        Vector rhs(dim);
        Vector rv = -r_d;
        for (Eigen::Index k = 0; k < nl; ++k)
          rv[w.idx_lo[static_cast<std::size_t>(k)]] -= r_wl[k] / gl[k];
        for (Eigen::Index k = 0; k < nu; ++k)
          rv[w.idx_up[static_cast<std::size_t>(k)]] += r_wu[k] / gu[k];
        rhs.head(n) = rv;
        if (me > 0) rhs.segment(n, me) = -r_p;
        if (min > 0) rhs.tail(min) = -r_i + r_zs.cwiseQuotient(st.z);
        Vector sol = lu.solve(rhs);
        sol += lu.solve(rhs - K * sol);  // two refinement passes
        sol += lu.solve(rhs - K * sol);
        dv = sol.head(n);
        dy = sol.segment(n, me);
        dz = sol.tail(min);
        if (min > 0)
          ds = -r_i - p.A_in * dv;
        else
          ds.resize(0);
        dwl.resize(nl);
        dwu.resize(nu);
        for (Eigen::Index k = 0; k < nl; ++k) {
          double d = dv[w.idx_lo[static_cast<std::size_t>(k)]];
          dwl[k] = (-r_wl[k] - st.wl[k] * d) / gl[k];
        }
        for (Eigen::Index k = 0; k < nu; ++k) {
          double d = -dv[w.idx_up[static_cast<std::size_t>(k)]];
          dwu[k] = (-r_wu[k] - st.wu[k] * d) / gu[k];
        }
        return dv.allFinite() && ds.allFinite() && dz.allFinite() && dy.allFinite() &&
               dwl.allFinite() && dwu.allFinite();
      };

      // predictor
      Vector r_zs = st.z.cwiseProduct(st.s);
      Vector r_wl = st.wl.cwiseProduct(gl);
      Vector r_wu = st.wu.cwiseProduct(gu);
      if (!solve_newton(r_zs, r_wl, r_wu)) continue;

      for (Eigen::Index k = 0; k < nl; ++k) dgl[k] = dv[w.idx_lo[static_cast<std::size_t>(k)]];
      for (Eigen::Index k = 0; k < nu; ++k) dgu[k] = -dv[w.idx_up[static_cast<std::size_t>(k)]];
      ap = std::min({step_to_boundary(st.s, ds), step_to_boundary(gl, dgl),
                     step_to_boundary(gu, dgu), 1.0});
      ad = std::min({step_to_boundary(st.z, dz), step_to_boundary(st.wl, dwl),
                     step_to_boundary(st.wu, dwu), 1.0});
      double mu_aff = ((st.z + ad * dz).dot(st.s + ap * ds) +
                       (st.wl + ad * dwl).dot(gl + ap * dgl) +
                       (st.wu + ad * dwu).dot(gu + ap * dgu)) /
                      static_cast<double>(m_comp);
      mu_aff = std::max(mu_aff, 0.0);
      double sigma = mu > 0.0 ? std::pow(mu_aff / mu, 3.0) : 0.0;
      if (!std::isfinite(sigma)) continue;
      sigma = std::clamp(sigma, 0.0, 1.0);
      // Endgame safeguard: once the barrier is small, complementarity must
      // not undershoot the remaining residuals, or the dual error can no
      // longer be corrected once the barrier terms polarize. Early on,
      // plain Mehrotra centering is the right amount.
      double r_inf = r_d.cwiseAbs().maxCoeff();
      if (me > 0) r_inf = std::max(r_inf, r_p.cwiseAbs().maxCoeff());
      if (min > 0) r_inf = std::max(r_inf, r_i.cwiseAbs().maxCoeff());
      if (mu > 0.0 && mu < 1e-3 && r_inf > mu)
        sigma = std::max(sigma, std::min(0.9, 0.5 * r_inf / mu));

      // corrector
      Vector r_zs_c = r_zs + dz.cwiseProduct(ds) - Vector::Constant(min, sigma * mu);
      Vector r_wl_c = r_wl + dwl.cwiseProduct(dgl) - Vector::Constant(nl, sigma * mu);
      Vector r_wu_c = r_wu + dwu.cwiseProduct(dgu) - Vector::Constant(nu, sigma * mu);
      if (!solve_newton(r_zs_c, r_wl_c, r_wu_c)) continue;
      for (Eigen::Index k = 0; k < nl; ++k) dgl[k] = dv[w.idx_lo[static_cast<std::size_t>(k)]];
      for (Eigen::Index k = 0; k < nu; ++k) dgu[k] = -dv[w.idx_up[static_cast<std::size_t>(k)]];

      double tau = mu < 1e-6 ? 0.9995 : 0.995;
      ap = tau * std::min({step_to_boundary(st.s, ds), step_to_boundary(gl, dgl),
                           step_to_boundary(gu, dgu), 1.0 / tau});
      ad = tau * std::min({step_to_boundary(st.z, dz), step_to_boundary(st.wl, dwl),
                           step_to_boundary(st.wu, dwu), 1.0 / tau});
      finite_step = true;
    }
    if (!finite_step) break;  // fail safe: report the best iterate instead

    st.v += ap * dv;
    if (min > 0) {
      st.s += ap * ds;
      st.z += ad * dz;
      st.s = st.s.cwiseMax(1e-300);
      st.z = st.z.cwiseMax(1e-300);
    }
    st.y += ad * dy;
    st.wl += ad * dwl;
    st.wu += ad * dwu;
    st.wl = st.wl.cwiseMax(1e-300);
    st.wu = st.wu.cwiseMax(1e-300);
    // keep v strictly inside its box; the floor is scale-aware so the bound
    // gaps stay representable
    for (Eigen::Index k = 0; k < nl; ++k) {
      Eigen::Index i = w.idx_lo[static_cast<std::size_t>(k)];
      double floor = 1e-14 * (1.0 + std::abs(p.lower[i]));
      if (st.v[i] - p.lower[i] < floor) st.v[i] = p.lower[i] + floor;
    }
    for (Eigen::Index k = 0; k < nu; ++k) {
      Eigen::Index i = w.idx_up[static_cast<std::size_t>(k)];
      double floor = 1e-14 * (1.0 + std::abs(p.upper[i]));
      if (p.upper[i] - st.v[i] < floor) st.v[i] = p.upper[i] - floor;
    }
  }

  // Did not converge. Try the active-set polish, then decide between
  // Infeasible / Unbounded / MaxIter.
  {
    QpSolution cand = extract(p, w, st);
    if (cand.kkt_residual <= tol) {
      cand.status = QpStatus::Optimal;
      cand.iterations = iter;
      return cand;
    }
    if (cand.kkt_residual < best_err) best = cand;
  }
  {
    QpSolution polished;
    if (try_polish(p, w, best_state, tol, polished) ||
        try_polish(p, w, st, tol, polished)) {
      polished.status = QpStatus::Optimal;
      polished.iterations = iter;
      return polished;
    }
  }
  best.iterations = iter;

  double pfeas = 0.0;
  if (p.num_eq() > 0) pfeas = (p.A_eq * best.primal - p.b_eq).cwiseAbs().maxCoeff();
  if (min > 0)
    pfeas = std::max(pfeas, std::max(0.0, (p.A_in * best.primal - p.b_in).maxCoeff()));

  if (!phase1 && pfeas > tol) {
    double viol = elastic_violation(p, tol, max_iter);
    if (viol > tol) {
      best.status = QpStatus::Infeasible;
      return best;
    }
  }
  best.status = diverged ? QpStatus::Unbounded : QpStatus::MaxIter;
  return best;
}

}  // namespace

QpSolution solve_qp(const QpProblem& p, double tol, int max_iter) {
  return solve_qp_impl(p, tol, max_iter, /*phase1=*/false);
}

}  // namespace dpme
