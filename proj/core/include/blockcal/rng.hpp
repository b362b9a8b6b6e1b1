#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace blockcal {

// Deterministic RNG wrapper. mt19937_64 itself is portable, but the
// std::*_distribution adapters are not (implementations may consume the
// stream differently), so all variate generation is spelled out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, pairs cached.
  double normal();

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
  std::uint64_t uniform_int(std::uint64_t n);

  // Sample k distinct indices from [0, n) without replacement, returned sorted.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  // Derive an independent stream (e.g. one per replicate) from this one.
  Rng spawn() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ull); }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace blockcal
