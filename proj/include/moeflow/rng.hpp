#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace moeflow {

// splitmix64 finalizer; also used as the mixing function for counter streams.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// FNV-1a over the module name, folded into the run seed. Every source of
// randomness in the project derives its stream from a single seed this way.
inline std::uint64_t module_seed(std::uint64_t seed, std::string_view module) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : module) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return hash_combine(seed, h);
}

inline double u64_to_unit(std::uint64_t x) {
  // 53 random mantissa bits -> [0, 1)
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

// Sequential splitmix64 generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double next_unit() { return u64_to_unit(next_u64()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  double gaussian() {
    // Box-Muller, no cached spare so the stream stays position-independent.
    double u1 = next_unit();
    double u2 = next_unit();
    while (u1 <= 0.0) u1 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

// Counter-based stream: the value at (seed, a, b) never depends on evaluation
// order, which keeps data generation reproducible under any traversal.
inline std::uint64_t counter_u64(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b) {
  return mix64(hash_combine(hash_combine(seed, a), b));
}

inline double counter_gaussian(std::uint64_t seed, std::uint64_t a,
                               std::uint64_t b) {
  double u1 = u64_to_unit(counter_u64(seed, a, b * 2));
  double u2 = u64_to_unit(counter_u64(seed, a, b * 2 + 1));
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace moeflow
