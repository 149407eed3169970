#pragma once

// Seeded randomized cases for property tests. Each case gets its own
// engine derived from (seed, index) so a failure names one reproducible
// case.

#include <cstdint>
#include <cstdlib>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

namespace cases {

inline constexpr int default_count = 1000;

inline std::uint64_t base_seed() {
  if (const char* s = std::getenv("CSRM_PROPERTY_SEED")) return std::stoull(s);
  return 0x5eed2024ULL;
}

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  double range(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return unit() < p; }

  // Values on a 0.05 grid hit ties and exact boundaries far more often
  // than continuous draws.
  double unit_or_grid() { return coin(0.3) ? integer(0, 20) * 0.05 : unit(); }

  std::vector<double> weights(std::size_t n) {
    std::vector<double> w(n);
    double sum = 0.0;
    for (auto& x : w) sum += (x = range(0.01, 1.0));
    for (auto& x : w) x /= sum;
    return w;
  }

  std::string ident(const std::string& prefix, int i) { return prefix + std::to_string(i); }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Runs fn(gen, index) for `count` cases; stops at the first failing case
/// and reports how to replay it.
template <typename Fn>
void for_cases(int count, Fn&& fn) {
  const std::uint64_t seed = base_seed();
  for (int i = 0; i < count; ++i) {
    Gen g(seed * 1000003ULL + static_cast<std::uint64_t>(i));
    SCOPED_TRACE("case " + std::to_string(i) + " (CSRM_PROPERTY_SEED=" + std::to_string(seed) + ")");
    fn(g, i);
    if (::testing::Test::HasFailure()) return;
  }
}

}  // namespace cases
