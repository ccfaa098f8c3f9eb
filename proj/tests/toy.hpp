#pragma once

// Shared fixtures: the one-dimensional toy instance with closed-form
// recourse psi(z) = -z^2 on X = [0, 1], and a random bounded bilinear
// instance with relatively complete recourse by construction.

#include "dpme/model.hpp"
#include "dpme/rng.hpp"

namespace dpme::testing {

// n1 = n2 = 1, f(x, y) = -x y, constraints 0 <= y <= x, X = [0, 1].
// psi(z) = -z^2, psibar(x, z) = -max(z, 0) x, Xbar = [-0.05, 1.05].
inline BilinearTwoStageModel make_toy_t1() {
  BilinearTwoStageModel m;
  FirstStage& fs = m.first_stage;
  fs.c = Vector::Zero(1);
  fs.P = Matrix::Zero(1, 1);
  fs.box_lower = Vector::Constant(1, 0.0);
  fs.box_upper = Vector::Constant(1, 1.0);
  fs.A_ineq = Matrix(0, 1);
  fs.b_ineq = Vector(0);
  fs.A_eq = Matrix(0, 1);
  fs.b_eq = Vector(0);
  fs.xbar_margin = default_xbar_margin(fs.box_lower, fs.box_upper);
  fs.x0 = Vector::Constant(1, 0.5);

  Scenario sc;
  sc.a = Vector::Zero(1);
  sc.b = Vector::Zero(1);
  sc.B = Matrix::Constant(1, 1, -1.0);
  sc.C = Matrix::Constant(1, 1, -1.0);  // y - x <= 0
  sc.D = Matrix::Constant(1, 1, 1.0);
  sc.h = Vector::Zero(1);
  sc.F = Matrix(0, 1);
  sc.d = Vector(0);
  sc.y_lower = Vector::Constant(1, 0.0);
  sc.y_upper = Vector::Constant(1, 2.0);
  sc.weight = 1.0;
  m.scenarios.push_back(sc);
  return m;
}

// Random bilinear instance; a reference point y0 in the y box satisfies the
// joint rows for every x in Xbar, so recourse is relatively complete.
inline BilinearTwoStageModel make_random_bilinear(std::uint64_t seed, int S,
                                                  int n1 = 3, int n2 = 4,
                                                  int mj = 2, int me = 1) {
  Rng rng(derive_seed(seed, 0xB11Bu));
  BilinearTwoStageModel m;
  FirstStage& fs = m.first_stage;
  fs.c = Vector(n1);
  for (int i = 0; i < n1; ++i) fs.c[i] = rng.uniform(-1.0, 1.0);
  fs.P = Matrix::Zero(n1, n1);
  fs.box_lower = Vector(n1);
  fs.box_upper = Vector(n1);
  for (int i = 0; i < n1; ++i) {
    fs.box_lower[i] = rng.uniform(-1.0, 0.0);
    fs.box_upper[i] = fs.box_lower[i] + rng.uniform(0.5, 2.0);
  }
  fs.A_ineq = Matrix(0, n1);
  fs.b_ineq = Vector(0);
  fs.A_eq = Matrix(0, n1);
  fs.b_eq = Vector(0);
  fs.xbar_margin = default_xbar_margin(fs.box_lower, fs.box_upper);
  fs.x0 = 0.5 * (fs.box_lower + fs.box_upper);

  Vector xbar_lo = fs.xbar_lower(), xbar_hi = fs.xbar_upper();
  for (int s = 0; s < S; ++s) {
    Scenario sc;
    sc.a = Vector(n1);
    sc.b = Vector(n2);
    for (int i = 0; i < n1; ++i) sc.a[i] = rng.uniform(-1.0, 1.0);
    for (int j = 0; j < n2; ++j) sc.b[j] = rng.uniform(-1.0, 1.0);
    sc.B = Matrix(n1, n2);
    for (int i = 0; i < n1; ++i)
      for (int j = 0; j < n2; ++j) sc.B(i, j) = rng.uniform(-1.0, 1.0);
    sc.y_lower = Vector::Constant(n2, 0.0);
    sc.y_upper = Vector::Constant(n2, rng.uniform(1.0, 3.0));
    Vector y0(n2);
    for (int j = 0; j < n2; ++j) y0[j] = rng.uniform(sc.y_lower[j], sc.y_upper[j]);
    sc.C = Matrix(mj, n1);
    sc.D = Matrix(mj, n2);
    sc.h = Vector(mj);
    for (int r = 0; r < mj; ++r) {
      for (int i = 0; i < n1; ++i) sc.C(r, i) = rng.uniform(-1.0, 1.0);
      for (int j = 0; j < n2; ++j) sc.D(r, j) = rng.uniform(-1.0, 1.0);
      double worst = 0.0;
      for (int i = 0; i < n1; ++i)
        worst += std::max(sc.C(r, i) * xbar_lo[i], sc.C(r, i) * xbar_hi[i]);
      sc.h[r] = worst + sc.D.row(r).dot(y0) + rng.uniform(0.1, 1.0);
    }
    sc.F = Matrix(me, n2);
    for (int r = 0; r < me; ++r)
      for (int j = 0; j < n2; ++j) sc.F(r, j) = rng.uniform(-1.0, 1.0);
    sc.d = sc.F * y0;
    sc.weight = 1.0 / S;
    m.scenarios.push_back(std::move(sc));
  }
  return m;
}

}  // namespace dpme::testing
