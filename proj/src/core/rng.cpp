#include "core/rng.hpp"

#include <cmath>
#include <numbers>

namespace mppm {
namespace {

uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t sm = seed;
  for (auto& s : s_) s = splitmix64(sm);
}

Rng Rng::keyed(uint64_t seed, std::initializer_list<uint64_t> parts) {
  uint64_t sm = seed;
  uint64_t acc = splitmix64(sm);
  for (uint64_t p : parts) {
    sm = acc ^ (p + 0x9e3779b97f4a7c15ULL);
    acc = splitmix64(sm);
  }
  Rng r(0);
  uint64_t st = acc;
  for (auto& s : r.s_) s = splitmix64(st);
  return r;
}

Rng Rng::keyed(uint64_t seed, std::string_view label) {
  // FNV-1a over the label, folded into the key chain.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return keyed(seed, {h});
}

uint64_t Rng::next_u64() {
  uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

uint64_t Rng::below(uint64_t n) {
  // Rejection sampling on the top bits keeps the draw unbiased.
  uint64_t threshold = (0 - n) % n;
  for (;;) {
    uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

Rng Rng::split() { return split(0); }

Rng Rng::split(uint64_t salt) {
  uint64_t a = next_u64();
  uint64_t b = next_u64();
  Rng r(0);
  uint64_t st = a ^ rotl(b, 32) ^ (salt + 0x9e3779b97f4a7c15ULL);
  for (auto& s : r.s_) s = splitmix64(st);
  return r;
}

}  // namespace mppm
