#include "dpme/sampling.hpp"

#include <algorithm>
#include <stdexcept>

namespace dpme {

SampleSchedule SampleSchedule::linear(long long eta) {
  SampleSchedule s;
  s.kind = Kind::Linear;
  s.eta = eta;
  return s;
}

SampleSchedule SampleSchedule::constant(long long size) {
  SampleSchedule s;
  s.kind = Kind::Custom;
  s.custom = {size};
  return s;
}

SampleSchedule SampleSchedule::custom_list(std::vector<long long> sizes) {
  SampleSchedule s;
  s.kind = Kind::Custom;
  s.custom = std::move(sizes);
  return s;
}

long long SampleSchedule::S_of(int nu) const {
  if (nu < 1) throw std::invalid_argument("SampleSchedule::S_of: nu starts at 1");
  if (kind == Kind::Linear) return eta * static_cast<long long>(nu);
  if (custom.empty()) throw std::invalid_argument("SampleSchedule: empty custom list");
  std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(nu - 1),
                                          custom.size() - 1);
  return custom[idx];
}

bool SampleSchedule::valid(std::string* why) const {
  auto fail = [&](const char* msg) {
    if (why) *why = msg;
    return false;
  };
  if (kind == Kind::Linear) {
    if (eta < 1) return fail("linear growth rate must be >= 1");
    return true;
  }
  if (custom.empty()) return fail("custom schedule must not be empty");
  for (std::size_t i = 0; i < custom.size(); ++i) {
    if (custom[i] < 1) return fail("schedule sizes must be >= 1");
    if (i > 0 && custom[i] < custom[i - 1])
      return fail("schedule sizes must be nondecreasing");
  }
  return true;
}

Scenario FinitePoolGenerator::draw(std::uint64_t, long long index) const {
  if (index < 0 || index >= finite_size())
    throw std::out_of_range("FinitePoolGenerator: index outside the pool");
  return scenarios_[static_cast<std::size_t>(index)];
}

long long ScenarioPool::capacity() const {
  if (reference_size >= 0) return reference_size;
  return generator ? generator->finite_size() : 0;
}

ScenarioPool make_pool(const ScenarioGenerator& gen, std::uint64_t seed,
                       long long reference_size) {
  ScenarioPool pool;
  pool.generator = &gen;
  pool.seed = seed;
  pool.reference_size = reference_size;
  long long cap = pool.capacity();
  if (cap > 0) pool.drawn.reserve(static_cast<std::size_t>(cap));
  return pool;
}

std::span<const Scenario> extend_pool(ScenarioPool& pool, long long target) {
  if (!pool.generator) throw std::invalid_argument("extend_pool: pool has no generator");
  long long cap = pool.capacity();
  if (cap > 0) target = std::min(target, cap);
  target = std::max<long long>(target, 0);
  while (static_cast<long long>(pool.drawn.size()) < target)
    pool.drawn.push_back(
        pool.generator->draw(pool.seed, static_cast<long long>(pool.drawn.size())));
  return {pool.drawn.data(), static_cast<std::size_t>(target)};
}

namespace {

class PoolSource final : public ScenarioSource {
 public:
  PoolSource(ScenarioPool& pool, const SampleSchedule& schedule)
      : pool_(pool), schedule_(schedule) {}

  std::span<const Scenario> working(int outer) override {
    return extend_pool(pool_, schedule_.S_of(outer + 1));
  }
  std::span<const Scenario> reference() override {
    long long cap = pool_.capacity();
    if (cap > 0) return extend_pool(pool_, cap);
    // continuous distribution: the drawn set is the best available proxy
    return {pool_.drawn.data(), pool_.drawn.size()};
  }
  bool heuristic() const override { return pool_.continuous(); }

 private:
  ScenarioPool& pool_;
  const SampleSchedule& schedule_;
};

}  // namespace

SolveReport solve_sampled(const FirstStage& fs, ScenarioPool& pool,
                          const SampleSchedule& schedule, const SolverConfig& cfg) {
  std::string why;
  if (!schedule.valid(&why))
    throw std::invalid_argument("solve_sampled: invalid schedule: " + why);
  PoolSource source(pool, schedule);
  return solve_with_source(fs, source, cfg);
}

}  // namespace dpme
