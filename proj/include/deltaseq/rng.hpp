#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace deltaseq {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic random stream with fixed draw consumption: uniform01 consumes
/// one engine word, normal always consumes exactly two (Box-Muller, no cached
/// second value). Fixed consumption is what makes counterfactual re-simulation
/// with identical draws possible.
class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    engine_.seed(splitmix64(s));
  }

  /// Stream for one patient, independent of how patients are scheduled
  /// across workers.
  static Rng for_patient(std::uint64_t seed, std::uint64_t patient_index) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s = a ^ (patient_index * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    return Rng(splitmix64(s));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on (0, 1].
  double uniform01() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal; always consumes two engine words.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Log-normal with median 1.
  double lognormal_median1(double sigma) { return std::exp(sigma * normal()); }

  int uniform_int(int n) {  // 0..n-1
    return static_cast<int>(engine_() % static_cast<std::uint64_t>(n));
  }

private:
  std::mt19937_64 engine_;
};

}  // namespace deltaseq
