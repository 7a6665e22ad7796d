#pragma once

#include <cmath>
#include <limits>
#include <string>

namespace swpce {

/// Half-open real interval [lo, hi); either end may be infinite. The default
/// three-stratum partition is [-delta, delta), (-inf, -delta), [delta, inf),
/// which tiles the line exactly.
struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  bool contains(double x) const { return x >= lo && x < hi; }
  bool is_full() const { return std::isinf(lo) && lo < 0 && std::isinf(hi) && hi > 0; }

  std::string label() const;

  static Interval full() { return Interval{}; }
  static Interval dissociative(double delta) { return Interval{-delta, delta}; }
  static Interval decrease(double delta) {
    return Interval{-std::numeric_limits<double>::infinity(), -delta};
  }
  static Interval increase(double delta) {
    return Interval{delta, std::numeric_limits<double>::infinity()};
  }
};

std::string format_double(double x);  // shortest round-trip representation

}  // namespace swpce
