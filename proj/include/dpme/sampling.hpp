#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dpme/model.hpp"
#include "dpme/solver.hpp"

namespace dpme {

// Growing sample-size schedule for the incremental solver. S_of(nu) is
// queried with nu >= 1; Linear gives S_nu = eta * nu, Custom reads the list
// (last entry repeated past its end). Entries must be positive and
// nondecreasing; the degenerate constant schedule reproduces the
// fixed-scenario algorithm exactly.
struct SampleSchedule {
  enum class Kind { Linear, Custom };
  Kind kind = Kind::Linear;
  long long eta = 100;
  std::vector<long long> custom;

  static SampleSchedule linear(long long eta);
  static SampleSchedule constant(long long size);
  static SampleSchedule custom_list(std::vector<long long> sizes);

  long long S_of(int nu) const;  // nu >= 1
  bool valid(std::string* why = nullptr) const;
};

// Index-addressed scenario factory: draw(root_seed, k) must depend only on
// (root_seed, k), never on other draws, so a pool can grow without
// perturbing what was already drawn.
class ScenarioGenerator {
 public:
  virtual ~ScenarioGenerator() = default;
  virtual Scenario draw(std::uint64_t root_seed, long long index) const = 0;
  virtual long long finite_size() const { return -1; }  // -1: continuous
};

// Replays a fixed scenario list; backs the finite-pool experiments where the
// reference distribution is the empirical one.
class FinitePoolGenerator final : public ScenarioGenerator {
 public:
  explicit FinitePoolGenerator(std::vector<Scenario> scenarios)
      : scenarios_(std::move(scenarios)) {}
  Scenario draw(std::uint64_t, long long index) const override;
  long long finite_size() const override {
    return static_cast<long long>(scenarios_.size());
  }

 private:
  std::vector<Scenario> scenarios_;
};

// Append-only sample pool. drawn[k] never changes once drawn; prefixes are
// stable under any interleaving of extensions.
struct ScenarioPool {
  const ScenarioGenerator* generator = nullptr;
  std::uint64_t seed = 0;
  std::vector<Scenario> drawn;
  long long reference_size = -1;  // -1: inherit generator, 0: continuous

  long long capacity() const;
  bool continuous() const { return capacity() <= 0; }
};

ScenarioPool make_pool(const ScenarioGenerator& gen, std::uint64_t seed,
                       long long reference_size = -1);

// Extends the pool to `target` draws (clamped to a finite capacity) and
// returns the prefix [0, target). Targets at or below the current size
// return the existing prefix unchanged.
std::span<const Scenario> extend_pool(ScenarioPool& pool, long long target);

// Incremental-sampling solver: outer iteration nu runs the same inner loop
// as the fixed-scenario algorithm on the pool prefix of size S_of(nu+1);
// stopping and the reported objective/KKT numbers are evaluated on the full
// reference pool (the drawn set so far for continuous pools, flagged
// heuristic in the report).
SolveReport solve_sampled(const FirstStage& fs, ScenarioPool& pool,
                          const SampleSchedule& schedule, const SolverConfig& cfg);

}  // namespace dpme
