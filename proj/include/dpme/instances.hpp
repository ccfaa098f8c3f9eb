#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpme/model.hpp"
#include "dpme/rng.hpp"
#include "dpme/sampling.hpp"

namespace dpme {

struct TruncNormalSpec {
  double mean = 1.0;
  double sigma = 5.0;
  double lo = 0.0;
  double hi = 1.0;
};

// Power system planning benchmark. First stage picks plant capacities
// x_i in [8, 15] and mixture weights x_g on the simplex; each scenario is a
// transportation problem whose objective is scaled by the weighted mixture
// probability, which makes the recourse bilinear in (x, y).
struct PowerConfig {
  int n_plants = 5;     // |I|
  int n_mix = 5;        // |G|
  int n_locations = 8;  // |J|
  double cap_lo = 8.0, cap_hi = 15.0;
  double weight_lo = 0.0, weight_hi = 1.0;
  double y_lo = 0.0, y_hi = 5.0;
  double cost_lo = 0.0, cost_hi = 5.0;
  TruncNormalSpec q_trunc{1.0, 5.0, 2.0, 4.0};
  TruncNormalSpec pi_trunc{1.0, 5.0, 3.0, 5.0};
  TruncNormalSpec d_trunc{1.0, 5.0, 2.0, 5.0};
  double budget_fraction = 0.75;  // must lie in (0, 1)
  bool row_normalize_p = false;   // per-scenario reading of the mixture masses
  std::uint64_t seed = 0;

  int n1() const { return n_plants + n_mix; }
  int n2() const { return n_plants * n_locations; }

  void set_sigma(double sigma) {
    q_trunc.sigma = pi_trunc.sigma = d_trunc.sigma = sigma;
  }
};

// One scenario's raw draws before canonical-form conversion.
struct PowerScenarioData {
  Vector q;      // unit production costs, |I|
  Vector pi;     // prices, |J|
  Vector d;      // demands, |J|
  Vector p_raw;  // mixture masses before normalization, |G|
};

PowerScenarioData draw_power_scenario_data(const PowerConfig& cfg, Rng& rng);

struct DeSize {
  long long rows = 0;
  long long cols = 0;
};

// Deterministic-equivalent dimensions:
//   cols = n1 + n2 S, rows = (first-stage rows incl. boxes) + S (per-scenario
//   rows incl. y boxes); 40 S + 10 and 93 S + 22 at the default sizes.
DeSize compute_de_size(const PowerConfig& cfg, long long S);

class InstanceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Generates the benchmark instance: budget + simplex first stage, S
// scenarios with capacity rows sum_j y_ij <= x_i and demand rows
// sum_i y_ij = d_js. The scenario objective keeps the factor S inside B so
// the 1/S sample average reproduces the intended total cost exactly.
// Throws InstanceError when the budget fraction makes X empty.
BilinearTwoStageModel generate_power_instance(const PowerConfig& cfg, long long S);

// Scenario generator for incremental sampling backed by the power
// randomizer; mixture masses use the density-ratio normalization
// w = u / E[u] so draws are independent of the pool size.
class PowerScenarioGenerator final : public ScenarioGenerator {
 public:
  explicit PowerScenarioGenerator(PowerConfig cfg) : cfg_(std::move(cfg)) {}
  Scenario draw(std::uint64_t root_seed, long long index) const override;
  long long finite_size() const override { return -1; }
  const PowerConfig& config() const { return cfg_; }

 private:
  PowerConfig cfg_;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Instance files are JSON with a header {schema_version, tool, kind, seed,
// dims, config}, a first_stage block and a scenario array. Numbers are
// written as shortest round-trip decimals, so save/load is lossless.
// save_instance writes through a .partial file and renames on success.
void save_instance(const BilinearTwoStageModel& model, const std::string& path,
                   const std::string& kind = "custom", std::uint64_t seed = 0,
                   const PowerConfig* cfg = nullptr);
BilinearTwoStageModel load_instance(const std::string& path);

std::string serialize_instance(const BilinearTwoStageModel& model,
                               const std::string& kind = "custom",
                               std::uint64_t seed = 0,
                               const PowerConfig* cfg = nullptr);
BilinearTwoStageModel deserialize_instance(const std::string& text);

// FNV-1a over the given bytes; digests identify instances in output headers.
std::uint64_t fnv1a(const void* data, std::size_t size);
std::string digest_string(std::uint64_t h);
std::string file_digest(const std::string& path);
std::string scenario_digest(std::span<const Scenario> scenarios);

}  // namespace dpme
