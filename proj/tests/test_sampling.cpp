#include <doctest.h>

#include <cstdio>
#include <cstring>

#include "dpme/instances.hpp"
#include "dpme/sampling.hpp"

using namespace dpme;

TEST_CASE("schedule arithmetic and validity") {
  SampleSchedule lin = SampleSchedule::linear(100);
  CHECK(lin.S_of(1) == 100);
  CHECK(lin.S_of(7) == 700);
  CHECK(lin.valid());

  SampleSchedule cst = SampleSchedule::constant(500);
  CHECK(cst.S_of(1) == 500);
  CHECK(cst.S_of(50) == 500);
  CHECK(cst.valid());

  SampleSchedule cus = SampleSchedule::custom_list({10, 20, 40});
  CHECK(cus.S_of(2) == 20);
  CHECK(cus.S_of(9) == 40);  // last entry repeats
  CHECK(cus.valid());

  std::string why;
  CHECK(!SampleSchedule::custom_list({10, 5}).valid(&why));
  CHECK(!SampleSchedule::linear(0).valid(&why));
  CHECK_THROWS_AS(lin.S_of(0), std::invalid_argument);
}

TEST_CASE("pool extension is idempotent with stable prefixes") {
  PowerConfig cfg;
  cfg.seed = 31;
  PowerScenarioGenerator gen(cfg);
  ScenarioPool pool = make_pool(gen, 1234, /*reference_size=*/200);

  auto first = extend_pool(pool, 10);
  CHECK(first.size() == 10);
  std::string digest10 = scenario_digest(first);

  auto again = extend_pool(pool, 10);
  CHECK(again.size() == 10);
  CHECK(scenario_digest(again) == digest10);

  auto grown = extend_pool(pool, 25);
  CHECK(grown.size() == 25);
  CHECK(scenario_digest(grown.subspan(0, 10)) == digest10);

  // smaller targets return the unchanged prefix
  auto shrunk = extend_pool(pool, 5);
  CHECK(shrunk.size() == 5);
  CHECK(scenario_digest(grown.subspan(0, 10)) == digest10);
}

TEST_CASE("prefix stability under interleaved extensions") {
  PowerConfig cfg;
  cfg.seed = 77;
  PowerScenarioGenerator gen(cfg);

  ScenarioPool a = make_pool(gen, 555, 120);
  ScenarioPool b = make_pool(gen, 555, 120);
  extend_pool(a, 120);
  // b grows in ragged steps
  for (long long t : {3LL, 17LL, 18LL, 60LL, 59LL, 120LL}) extend_pool(b, t);
  CHECK(scenario_digest({a.drawn.data(), a.drawn.size()}) ==
        scenario_digest({b.drawn.data(), b.drawn.size()}));
}

TEST_CASE("seeded generator digest is replay stable") {
  PowerConfig cfg;  // defaults, seed 0
  PowerScenarioGenerator gen(cfg);
  ScenarioPool pool = make_pool(gen, 2024, 100);
  auto scen = extend_pool(pool, 100);
  // golden digest recorded on the first implementation run; any change to
  // the draw path is a compatibility break
  CHECK(scenario_digest(scen) == "fnv1a:1485578146792387");
}

TEST_CASE("independent streams: pool draws never perturb existing scenarios") {
  PowerConfig cfg;
  cfg.seed = 9;
  PowerScenarioGenerator gen(cfg);
  ScenarioPool small = make_pool(gen, 42, 0);  // continuous
  ScenarioPool large = make_pool(gen, 42, 0);
  extend_pool(small, 7);
  extend_pool(large, 70);
  CHECK(scenario_digest({small.drawn.data(), 7}) ==
        scenario_digest({large.drawn.data(), 7}));
}

TEST_CASE("degenerate constant schedule reproduces the fixed-scenario solver") {
  PowerConfig cfg;
  cfg.seed = 17;
  auto m = generate_power_instance(cfg, 30);

  SolverConfig scfg;
  scfg.threads = 2;
  SolveReport fixed = solve(m.first_stage, m.scenarios, scfg);

  FinitePoolGenerator gen(m.scenarios);
  ScenarioPool pool = make_pool(gen, 0);
  SolveReport sampled =
      solve_sampled(m.first_stage, pool, SampleSchedule::constant(30), scfg);

  CHECK(fixed.status == sampled.status);
  REQUIRE(fixed.trace.size() == sampled.trace.size());
  for (std::size_t i = 0; i < fixed.trace.size(); ++i) {
    const TraceRow &a = fixed.trace[i], &b = sampled.trace[i];
    CHECK(a.S_nu == b.S_nu);
    CHECK(a.inner_iters == b.inner_iters);
    CHECK(std::memcmp(&a.objective, &b.objective, sizeof(double)) == 0);
    CHECK(std::memcmp(&a.feas_abs, &b.feas_abs, sizeof(double)) == 0);
    CHECK(std::memcmp(&a.kkt_abs, &b.kkt_abs, sizeof(double)) == 0);
    CHECK(std::memcmp(&a.criticality, &b.criticality, sizeof(double)) == 0);
  }
  CHECK(std::memcmp(fixed.x_final.data(), sampled.x_final.data(),
                    sizeof(double) * static_cast<std::size_t>(fixed.x_final.size())) == 0);
}

TEST_CASE("linear schedule accounting and full-pool reporting") {
  PowerConfig cfg;
  cfg.seed = 23;
  auto m = generate_power_instance(cfg, 60);
  FinitePoolGenerator gen(m.scenarios);
  ScenarioPool pool = make_pool(gen, 0);

  SolverConfig scfg;
  scfg.threads = 2;
  SampleSchedule sched = SampleSchedule::linear(20);
  SolveReport rep = solve_sampled(m.first_stage, pool, sched, scfg);
  CHECK(rep.status == SolveStatus::Converged);
  CHECK(rep.reference_scenarios == 60);
  CHECK(!rep.heuristic_continuous);
  for (std::size_t i = 0; i < rep.trace.size(); ++i) {
    long long scheduled = sched.S_of(static_cast<int>(i) + 1);
    CHECK(rep.trace[i].S_nu == std::min<long long>(scheduled, 60));
  }
}

TEST_CASE("continuous pools are flagged heuristic") {
  PowerConfig cfg;
  cfg.seed = 3;
  // the first stage does not depend on the scenario count
  FirstStage fs = generate_power_instance(cfg, 1).first_stage;
  PowerScenarioGenerator gen(cfg);
  ScenarioPool pool = make_pool(gen, 11, 0);
  SolverConfig scfg;
  scfg.threads = 2;
  scfg.max_outer = 3;
  SolveReport rep = solve_sampled(fs, pool, SampleSchedule::linear(10), scfg);
  CHECK(rep.heuristic_continuous);
  CHECK(rep.trace.size() >= 1);
}
