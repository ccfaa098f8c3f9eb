#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "dpme/instances.hpp"
#include "dpme/solver.hpp"

using namespace dpme;

TEST_CASE("deterministic-equivalent sizes reproduce the published table") {
  PowerConfig cfg;
  struct Row {
    long long S, rows, cols;
  };
  const Row table[] = {
      {1000, 93022, 40010},         {5000, 465022, 200010},
      {10000, 930022, 400010},      {30000, 2790022, 1200010},
      {80000, 7440022, 3200010},    {120000, 11160022, 4800010},
      {500000, 46500022, 20000010},
  };
  for (const Row& r : table) {
    DeSize size = compute_de_size(cfg, r.S);
    CHECK(size.rows == r.rows);
    CHECK(size.cols == r.cols);
  }
  DeSize one = compute_de_size(cfg, 1);
  CHECK(one.rows == 115);
  CHECK(one.cols == 50);
  CHECK(cfg.n1() == 10);
  CHECK(cfg.n2() == 40);
}

TEST_CASE("constraint counts match an explicit enumeration of generated rows") {
  PowerConfig cfg;
  cfg.seed = 4;
  for (long long S : {1LL, 10LL, 100LL}) {
    auto m = generate_power_instance(cfg, S);
    long long rows = m.first_stage.b_ineq.size() + m.first_stage.b_eq.size() +
                     2 * m.first_stage.n();
    long long cols = m.first_stage.n();
    for (const Scenario& sc : m.scenarios) {
      rows += sc.h.size() + sc.d.size() + 2 * sc.n2();
      cols += sc.n2();
    }
    DeSize size = compute_de_size(cfg, S);
    CHECK(rows == size.rows);
    CHECK(cols == size.cols);
  }
}

TEST_CASE("truncated draws stay inside their intervals") {
  PowerConfig cfg;
  Rng rng(42);
  for (int k = 0; k < 10000 / (cfg.n_plants + 2 * cfg.n_locations); ++k) {
    PowerScenarioData d = draw_power_scenario_data(cfg, rng);
    CHECK((d.q.array() >= cfg.q_trunc.lo).all());
    CHECK((d.q.array() <= cfg.q_trunc.hi).all());
    CHECK((d.pi.array() >= cfg.pi_trunc.lo).all());
    CHECK((d.pi.array() <= cfg.pi_trunc.hi).all());
    CHECK((d.d.array() >= cfg.d_trunc.lo).all());
    CHECK((d.d.array() <= cfg.d_trunc.hi).all());
    CHECK((d.p_raw.array() >= 0.0).all());
  }
}

namespace {

// recover the mixture weights S * p_sg from the assembled bilinear block by
// replaying the scenario's draw stream
Matrix recover_weights(const PowerConfig& cfg, const BilinearTwoStageModel& m) {
  const int I = cfg.n_plants, G = cfg.n_mix, J = cfg.n_locations;
  auto S = static_cast<long long>(m.scenarios.size());
  Matrix w(S, G);
  for (long long s = 0; s < S; ++s) {
    Rng rng(derive_seed(derive_seed(cfg.seed, 0x5CE7ULL), static_cast<std::uint64_t>(s)));
    PowerScenarioData d = draw_power_scenario_data(cfg, rng);
    int bi = 0, bj = 0;
    double denom = 0.0;
    for (int i = 0; i < I && denom == 0.0; ++i)
      for (int j = 0; j < J; ++j)
        if (std::abs(d.q[i] - d.pi[j]) > 1e-6) {
          bi = i;
          bj = j;
          denom = d.q[i] - d.pi[j];
          break;
        }
    REQUIRE(denom != 0.0);
    for (int g = 0; g < G; ++g)
      w(s, g) = m.scenarios[static_cast<std::size_t>(s)].B(I + g, bi * J + bj) / denom;
  }
  return w;
}

}  // namespace

TEST_CASE("mixture masses are column-stochastic by default, row behind the flag") {
  PowerConfig cfg;
  cfg.seed = 11;
  const long long S = 40;

  auto m = generate_power_instance(cfg, S);
  Matrix w = recover_weights(cfg, m);
  // w = S * p with sum_s p_sg = 1  =>  column sums equal S
  for (int g = 0; g < cfg.n_mix; ++g)
    CHECK(w.col(g).sum() == doctest::Approx(static_cast<double>(S)).epsilon(1e-9));

  cfg.row_normalize_p = true;
  auto mr = generate_power_instance(cfg, S);
  Matrix wr = recover_weights(cfg, mr);
  for (long long s = 0; s < S; ++s)
    CHECK(wr.row(s).sum() == doctest::Approx(static_cast<double>(S)).epsilon(1e-9));
}

TEST_CASE("generation is deterministic in (cfg, S, seed)") {
  PowerConfig cfg;
  cfg.seed = 123;
  auto a = generate_power_instance(cfg, 7);
  auto b = generate_power_instance(cfg, 7);
  CHECK(serialize_instance(a, "power", cfg.seed, &cfg) ==
        serialize_instance(b, "power", cfg.seed, &cfg));
}

TEST_CASE("save / load round trip is lossless and solve-equivalent") {
  PowerConfig cfg;
  cfg.seed = 99;
  auto m = generate_power_instance(cfg, 3);
  auto path = std::filesystem::temp_directory_path() / "dpme_roundtrip.json";
  save_instance(m, path.string(), "power", cfg.seed, &cfg);
  auto loaded = load_instance(path.string());
  CHECK(serialize_instance(m) == serialize_instance(loaded));

  SolverConfig scfg;
  scfg.threads = 1;
  scfg.max_outer = 4;
  SolveReport ra = solve(m.first_stage, m.scenarios, scfg);
  SolveReport rb = solve(loaded.first_stage, loaded.scenarios, scfg);
  REQUIRE(ra.trace.size() == rb.trace.size());
  for (std::size_t i = 0; i < ra.trace.size(); ++i)
    CHECK(ra.trace[i].objective == rb.trace[i].objective);
  std::filesystem::remove(path);
}

TEST_CASE("schema violations name the missing field") {
  PowerConfig cfg;
  cfg.seed = 5;
  auto m = generate_power_instance(cfg, 2);
  std::string text = serialize_instance(m, "power", cfg.seed, &cfg);

  SUBCASE("missing scenario block field") {
    auto pos = text.find("\"h\"");
    REQUIRE(pos != std::string::npos);
    std::string broken = text;
    broken.replace(pos, 3, "\"hh\"");
    try {
      deserialize_instance(broken);
      FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
      CHECK(std::string(e.what()).find("'h'") != std::string::npos);
      CHECK(std::string(e.what()).find("scenarios[0]") != std::string::npos);
    }
  }
  SUBCASE("malformed document") {
    CHECK_THROWS_AS(deserialize_instance("{ not json"), SchemaError);
  }
  SUBCASE("wrong schema version") {
    std::string broken = text;
    auto pos = broken.find("\"schema_version\": 1");
    REQUIRE(pos != std::string::npos);
    broken.replace(pos, std::string("\"schema_version\": 1").size(),
                   "\"schema_version\": 99");
    CHECK_THROWS_AS(deserialize_instance(broken), SchemaError);
  }
}

TEST_CASE("degenerate budgets are rejected at generation") {
  PowerConfig cfg;
  cfg.budget_fraction = 0.0;
  CHECK_THROWS_AS(generate_power_instance(cfg, 2), InstanceError);
  cfg.budget_fraction = 1.0;
  CHECK_THROWS_AS(generate_power_instance(cfg, 2), InstanceError);
}

TEST_CASE("generated instances validate with zero probe failures") {
  PowerConfig cfg;
  cfg.seed = 2024;
  auto m = generate_power_instance(cfg, 10);
  auto rep = validate_instance(m.first_stage, m.scenarios, 25, 7);
  CHECK(rep.x_nonempty);
  CHECK(rep.failures.empty());
  CHECK(rep.kappa1_hat > 0.0);
  CHECK(rep.weight_sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("demands beyond total capacity are caught by the probe") {
  PowerConfig cfg;
  cfg.seed = 8;
  auto m = generate_power_instance(cfg, 4);
  // raise one scenario's demands far above the attainable supply
  m.scenarios[2].d.setConstant(50.0);
  auto rep = validate_instance(m.first_stage, m.scenarios, 10, 7);
  CHECK(!rep.failures.empty());
  for (const auto& f : rep.failures) CHECK(f.scenario == 2);
}
