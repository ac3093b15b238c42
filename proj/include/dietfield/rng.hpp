#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace dietfield {

// Seeded pseudo-random stream. Wraps std::mt19937_64 (whose output sequence is fixed by the
// standard) and converts bits to floats itself so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Stream for the `index`-th independent consumer of `seed` (e.g. one per ray chunk).
  static Rng derive(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  float uniform() { return static_cast<float>(engine_() >> 40) * 0x1.0p-24f; }
  double uniform_double() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_double(); }

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller.
  double normal();

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dietfield
