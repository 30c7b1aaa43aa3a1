#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace tfnas {

// xoshiro256** seeded through splitmix64. Only integer arithmetic feeds the
// raw stream, so a seed produces the same sequence on every platform.
// Distribution helpers are implemented here rather than with <random>
// distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  static constexpr std::string_view algorithm() { return "xoshiro256**/splitmix64"; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // Standard normal (Box-Muller, one draw per call).
  double normal();

  // Independent child stream keyed by a label; does not advance this stream.
  Rng derive(std::string_view label) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace tfnas
