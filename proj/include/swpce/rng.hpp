#pragma once

#include <cstdint>

#include "swpce/special.hpp"

namespace swpce {

namespace detail {

/// Finalizer from SplitMix64 (Stafford variant 13); also used to derive stream keys.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace detail

/// Splittable counter-based generator. A stream is identified by a 64-bit key;
/// child streams are derived by hashing the parent key with user-supplied
/// indices, so any (seed, index path) names the same sequence regardless of
/// scheduling. Every stochastic operation in the library takes one of these
/// explicitly.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(detail::mix64(seed ^ detail::kGolden)) {}

  /// Derive an independent child stream keyed by up to three indices.
  RngStream fork(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
    std::uint64_t k = state_;
    k = detail::mix64(k ^ detail::mix64(a + 0x1ULL));
    k = detail::mix64(k ^ detail::mix64(b + 0x2ULL));
    k = detail::mix64(k ^ detail::mix64(c + 0x3ULL));
    return RngStream(FromKey{}, k);
  }

  std::uint64_t next_u64() {
    state_ += detail::kGolden;
    return detail::mix64(state_);
  }

  /// Uniform on the open interval (0, 1); never returns 0 or 1.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via the inverse CDF (deterministic, no rejection state).
  double normal() { return std_normal_quantile(uniform01()); }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  int bernoulli(double p) { return uniform01() < p ? 1 : 0; }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Bounded rejection (Lemire-style threshold) for exact uniformity.
    const std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

 private:
  struct FromKey {};
  RngStream(FromKey, std::uint64_t key) : state_(key) {}
  std::uint64_t state_;
};

}  // namespace swpce
