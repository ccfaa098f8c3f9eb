#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dpme/solver.hpp"
#include "toy.hpp"

using namespace dpme;
using dpme::testing::make_random_bilinear;
using dpme::testing::make_toy_t1;

namespace {
Vector scalar(double v) { return Vector::Constant(1, v); }

double weighted_cut_value(std::span<const SurrogateCut> cuts, const Vector& x) {
  double wsum = 0.0;
  for (const auto& c : cuts) wsum += c.weight;
  double acc = 0.0;
  for (const auto& c : cuts) acc += (c.weight / wsum) * c.value_at(x);
  return acc;
}
}  // namespace

TEST_CASE("toy surrogate cut: closed-form coefficients") {
  auto m = make_toy_t1();
  SurrogateCut cut = build_cut(m.first_stage, m.scenarios[0], scalar(0.5), 0.1);
  CHECK(cut.g_val == doctest::Approx(1.5125).epsilon(1e-9));
  CHECK(cut.slope[0] == doctest::Approx(6.05).epsilon(1e-8));
  CHECK(cut.value_at(scalar(0.5)) == doctest::Approx(-0.2625).epsilon(1e-9));
  // anchor tightness
  double env = partial_moreau(m.first_stage, m.scenarios[0], scalar(0.5), 0.1).value;
  CHECK(std::abs(cut.value_at(scalar(0.5)) - env) <= 1e-10);
}

TEST_CASE("cuts majorize the envelope") {
  auto toy = make_toy_t1();
  auto rnd = make_random_bilinear(17, 3);
  Rng rng(99);
  for (const auto& m : {toy, rnd}) {
    for (int trial = 0; trial < 10; ++trial) {
      Vector anchor = sample_x(m.first_stage, rng);
      double gamma = rng.uniform(0.05, 1.0);
      for (std::size_t s = 0; s < m.scenarios.size(); ++s) {
        SurrogateCut cut = build_cut(m.first_stage, m.scenarios[s], anchor, gamma);
        for (int k = 0; k < 10; ++k) {
          Vector x = sample_x(m.first_stage, rng);
          double env = partial_moreau(m.first_stage, m.scenarios[s], x, gamma).value;
          CHECK(cut.value_at(x) >= env - 1e-8);
        }
      }
    }
  }
}

TEST_CASE("toy master problem") {
  auto m = make_toy_t1();
  const auto& fs = m.first_stage;

  SUBCASE("interior minimizer from anchor 0.5") {
    SurrogateCut cut = build_cut(fs, m.scenarios[0], scalar(0.5), 0.1);
    MasterResult r = solve_master(fs, std::span(&cut, 1), 0.1);
    CHECK(r.x[0] == doctest::Approx(0.605).epsilon(1e-7));
  }
  SUBCASE("boundary fixed point from anchor 1.0") {
    SurrogateCut cut = build_cut(fs, m.scenarios[0], scalar(1.0), 0.1);
    CHECK(cut.slope[0] == doctest::Approx(11.55).epsilon(1e-7));
    MasterResult r = solve_master(fs, std::span(&cut, 1), 0.1);
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-8));
  }
  SUBCASE("zero-slope cut reduces to a projection of the origin") {
    SurrogateCut cut;
    cut.anchor = scalar(0.5);
    cut.gamma = 0.1;
    cut.g_val = 0.0;
    cut.slope = scalar(0.0);
    cut.weight = 1.0;
    MasterResult r = solve_master(fs, std::span(&cut, 1), 0.1);
    // projection of 0 onto [0, 1]; the bound is weakly active there, so the
    // interior point iterate lands within sqrt(tol) of the vertex
    CHECK(std::abs(r.x[0]) <= 1e-4);
  }
}

TEST_CASE("master optimum matches an independent recomputation") {
  auto m = make_random_bilinear(5, 6);
  Rng rng(123);
  for (int trial = 0; trial < 5; ++trial) {
    Vector anchor = sample_x(m.first_stage, rng);
    double gamma = rng.uniform(0.05, 0.8);
    std::vector<SurrogateCut> cuts;
    for (std::size_t s = 0; s < m.scenarios.size(); ++s)
      cuts.push_back(build_cut(m.first_stage, m.scenarios[s], anchor, gamma, 1e-9,
                               static_cast<int>(s)));
    MasterResult r = solve_master(m.first_stage, cuts, gamma);
    double recomputed = m.first_stage.phi(r.x) + weighted_cut_value(cuts, r.x);
    CHECK(std::abs(r.objective - recomputed) <= 1e-8);
  }
}

TEST_CASE("toy inner loop follows the closed-form iterate map") {
  auto m = make_toy_t1();
  SolverConfig cfg;
  cfg.final_envelope_sweep = true;
  cfg.threads = 1;

  InnerResult res = inner_loop(m.first_stage, m.scenarios, scalar(0.5), 0.1, 1e-6, cfg);
  CHECK(!res.stalled);
  CHECK(res.x_next[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(res.final_step_norm <= 1e-7);

  // iterates follow z <- min(z * 1.21, 1) until clipping
  double z = 0.5;
  std::vector<double> expected;
  while (true) {
    double nxt = std::min(z * 1.21, 1.0);
    expected.push_back(nxt);
    if (std::abs(nxt - z) <= 1e-7) break;
    z = nxt;
  }
  REQUIRE(res.iterations == static_cast<int>(expected.size()));

  // per-step descent: zeta(x_{i+1}) <= zeta(x_i) - |dx|^2 / (2 gamma) + tol
  for (std::size_t i = 0; i + 1 < res.steps.size(); ++i) {
    double lhs = res.steps[i + 1].zeta_hat;
    double rhs = res.steps[i].zeta_hat -
                 res.steps[i].step_norm * res.steps[i].step_norm / (2.0 * 0.1);
    CHECK(lhs <= rhs + 1e-6);
  }
  REQUIRE(res.zeta_hat_exit.has_value());
  double last_zh = res.steps.back().zeta_hat;
  double last_step = res.steps.back().step_norm;
  CHECK(*res.zeta_hat_exit <= last_zh - last_step * last_step / 0.2 + 1e-6);
}

TEST_CASE("inner loop at a fixed point terminates in one iteration") {
  auto m = make_toy_t1();
  SolverConfig cfg;
  cfg.threads = 1;
  InnerResult res = inner_loop(m.first_stage, m.scenarios, scalar(1.0), 0.1, 1e-6, cfg);
  CHECK(res.iterations == 1);
  CHECK(res.x_next[0] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("toy end-to-end solve reaches the global minimum") {
  auto m = make_toy_t1();
  SolverConfig cfg;
  cfg.threads = 1;
  SolveReport rep = solve(m.first_stage, m.scenarios, cfg);
  CHECK(rep.status == SolveStatus::Converged);
  CHECK(std::abs(rep.x_final[0] - 1.0) <= 1e-6);
  CHECK(std::abs(rep.objective - (-1.0)) <= 1e-6);
  CHECK(rep.criticality <= rep.epsilon_final * (1.0 + 1e-6));
  CHECK(!rep.trace.empty());
  for (const auto& row : rep.trace) CHECK(std::isfinite(row.objective));
}

TEST_CASE("criticality residual") {
  SUBCASE("toy boundary point") {
    auto m = make_toy_t1();
    SolverConfig cfg;
    cfg.threads = 1;
    InnerResult res = inner_loop(m.first_stage, m.scenarios, scalar(1.0), 0.1, 1e-6, cfg);
    Vector x_prev = scalar(1.0);
    CriticalityResult crit =
        criticality_residual(m.first_stage, m.scenarios, res.x_next, res.final_envelopes,
                             0.1, &x_prev);
    CHECK(crit.v[0] == doctest::Approx(-1.55).epsilon(1e-6));
    CHECK(crit.normal_cone_dist <= 1e-7);
    CHECK(crit.cheap_certificate <= 1e-6);
  }

  SUBCASE("interior points") {
    FirstStage fs;
    fs.c = Vector::Zero(2);
    fs.P = Matrix::Zero(2, 2);
    fs.box_lower = Vector::Zero(2);
    fs.box_upper = Vector::Ones(2);
    fs.A_ineq = Matrix(0, 2);
    fs.b_ineq = Vector(0);
    fs.A_eq = Matrix(0, 2);
    fs.b_eq = Vector(0);
    fs.xbar_margin = default_xbar_margin(fs.box_lower, fs.box_upper);
    fs.x0 = Vector::Constant(2, 0.5);
    Scenario sc;
    sc.weight = 1.0;
    std::vector<Scenario> scen{sc};

    EnvelopeResult env;
    env.prox_x = Vector::Constant(2, 0.5);
    env.c_sub = Vector::Zero(2);
    Vector x = Vector::Constant(2, 0.5);

    auto zero = criticality_residual(fs, scen, x, std::span(&env, 1), 0.5);
    CHECK(zero.normal_cone_dist <= 1e-12);

    env.c_sub << 1.0, 2.0;  // v = -c_sub, interior: residual = |v|
    auto nz = criticality_residual(fs, scen, x, std::span(&env, 1), 0.5);
    CHECK(nz.normal_cone_dist == doctest::Approx(std::sqrt(5.0)).epsilon(1e-9));
  }
}

TEST_CASE("deterministic replay produces identical traces") {
  auto m = make_random_bilinear(2718, 5);
  SolverConfig cfg;
  cfg.threads = 2;
  SolveReport a = solve(m.first_stage, m.scenarios, cfg);
  SolveReport b = solve(m.first_stage, m.scenarios, cfg);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    const TraceRow &ra = a.trace[i], &rb = b.trace[i];
    CHECK(std::memcmp(&ra.objective, &rb.objective, sizeof(double)) == 0);
    CHECK(std::memcmp(&ra.feas_abs, &rb.feas_abs, sizeof(double)) == 0);
    CHECK(std::memcmp(&ra.kkt_abs, &rb.kkt_abs, sizeof(double)) == 0);
    CHECK(std::memcmp(&ra.criticality, &rb.criticality, sizeof(double)) == 0);
    CHECK(ra.inner_iters == rb.inner_iters);
  }
  CHECK(std::memcmp(a.x_final.data(), b.x_final.data(),
                    sizeof(double) * static_cast<std::size_t>(a.x_final.size())) == 0);
}

TEST_CASE("objective trace obeys the quasi-Fejer allowance") {
  auto m = make_random_bilinear(31415, 6);
  // empirical modulus, generous margin for the sampling gap
  double kappa = 0.0;
  for (std::size_t s = 0; s < m.scenarios.size(); ++s)
    kappa = std::max(kappa,
                     estimate_lipschitz(m.first_stage, m.scenarios[s], 32, 7).kappa1);
  SolverConfig cfg;
  cfg.threads = 1;
  SolveReport rep = solve(m.first_stage, m.scenarios, cfg);
  REQUIRE(rep.trace.size() >= 2);
  for (std::size_t i = 0; i + 1 < rep.trace.size(); ++i) {
    double allowance = rep.trace[i + 1].gamma * (2.0 * kappa) * (2.0 * kappa) / 2.0;
    CHECK(rep.trace[i + 1].objective <= rep.trace[i].objective + allowance + 1e-9);
  }
}

TEST_CASE("inner loop terminates before the cap on validated instances") {
  auto m = make_random_bilinear(555, 4);
  SolverConfig cfg;
  cfg.threads = 1;
  SolveReport rep = solve(m.first_stage, m.scenarios, cfg);
  CHECK(rep.status == SolveStatus::Converged);
  for (const auto& row : rep.trace) CHECK(row.inner_iters < cfg.max_inner);
}
