#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace dpme {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Splits an independent stream off a root seed. Streams derived with
// different ids never share generator state, so growing one stream cannot
// perturb another.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t s = root ^ (0xd1b54a32d192ed03ULL * (stream + 1));
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return a ^ (b << 1) ^ (b >> 1);
}

// mt19937_64 with explicit conversion algorithms. std::*_distribution is
// implementation-defined, which would break replay-stable digests across
// toolchains; the generator itself is fully specified by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform on [0, 1) with 53-bit resolution
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; the sine twin is discarded so every draw consumes exactly
  // two generator words.
  double normal(double mean, double sigma) {
    double u1 = static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform01();
    double z = std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.28318530717958647692528676655900577 * u2);
    return mean + sigma * z;
  }

  // Rejection sampling: exactly distributed, valid for any interval with
  // positive mass.
  double truncated_normal(double mean, double sigma, double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("truncated_normal: empty interval");
    for (long attempt = 0; attempt < 100000000L; ++attempt) {
      double z = normal(mean, sigma);
      if (z >= lo && z <= hi) return z;
    }
    throw std::runtime_error("truncated_normal: interval has negligible mass");
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace dpme
