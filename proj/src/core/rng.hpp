#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace mppm {

// Splittable counter-keyed generator (xoshiro256++ seeded through splitmix64).
// Child streams derived from (seed, label parts) are independent of call order,
// which keeps batch-level work deterministic under any scheduling.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed);

  // Derives a fresh stream from a seed plus structured key parts
  // (e.g. {epoch, batch, sample, purpose}).
  static Rng keyed(uint64_t seed, std::initializer_list<uint64_t> parts);
  static Rng keyed(uint64_t seed, std::string_view label);

  uint64_t next_u64();
  // Uniform in [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; no caching, so draw order is stable.
  double normal();
  double normal(double mean, double stddev);
  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n);

  // Derives a child stream and advances this one.
  Rng split();
  Rng split(uint64_t salt);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t s_[4];
};

}  // namespace mppm
