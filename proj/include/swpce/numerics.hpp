#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "swpce/errors.hpp"
#include "swpce/interval.hpp"
#include "swpce/rng.hpp"
#include "swpce/special.hpp"

// Shared numerical kernel: Gauss-Hermite quadrature, damped Newton-Raphson,
// and exact sampling of bivariate-normal pairs truncated on their difference.

namespace swpce {

/// Physicists' Gauss-Hermite rule (weight function e^{-x^2}).
/// Raw weights sum to sqrt(pi); `prob_weights` are normalized to sum to 1 so
/// that sum_k prob_weights[k] * f(mean + sqrt(2 var) * nodes[k]) approximates
/// E[f(X)] for X ~ N(mean, var).
struct GaussHermiteRule {
  int order = 0;
  std::vector<double> nodes;         // ascending, symmetric about 0
  std::vector<double> weights;       // raw, sum = sqrt(pi)
  std::vector<double> prob_weights;  // weights / sqrt(pi)
};

/// Nodes and weights by Golub-Welsch (symmetric tridiagonal eigenproblem).
GaussHermiteRule gauss_hermite_rule(int n);

/// E[f(X)] for X ~ N(mean, var) by the given rule; exact passthrough at var = 0.
template <class F>
double ghq_expectation(const GaussHermiteRule& rule, double mean, double var, F&& f) {
  if (!(var >= 0.0)) throw std::invalid_argument("ghq_expectation: var must be >= 0");
  if (var == 0.0) return f(mean);
  const double scale = std::sqrt(2.0 * var);
  double acc = 0.0;
  for (int k = 0; k < rule.order; ++k) {
    acc += rule.prob_weights[k] * f(mean + scale * rule.nodes[k]);
  }
  return acc;
}

struct NewtonConfig {
  double tol = 1e-10;       // on |f|
  int max_iter = 100;
  double damping = 0.5;     // step shrink factor when |f| would increase
  int max_backtracks = 30;
  bool allow_damping = true;
};

/// Damped Newton-Raphson. Returns x with |f(x)| <= cfg.tol; throws
/// NonConvergenceError (carrying the last iterate and residual) otherwise.
template <class F, class DF>
double newton_solve(F&& f, DF&& df, double x0, const NewtonConfig& cfg = {}) {
  if (!(cfg.tol > 0.0) || cfg.max_iter < 1) {
    throw std::invalid_argument("newton_solve: bad config");
  }
  double x = x0;
  double fx = f(x);
  for (int it = 0; it < cfg.max_iter; ++it) {
    if (std::fabs(fx) <= cfg.tol) return x;
    const double d = df(x);
    const double step = fx / d;
    if (!std::isfinite(step)) {
      throw NonConvergenceError("newton_solve: derivative vanished or non-finite", x,
                                std::fabs(fx));
    }
    double s = step;
    double cand = x - s;
    double fc = f(cand);
    if (cfg.allow_damping) {
      int bt = 0;
      while ((!std::isfinite(fc) || std::fabs(fc) > std::fabs(fx)) && bt < cfg.max_backtracks) {
        s *= cfg.damping;
        cand = x - s;
        fc = f(cand);
        ++bt;
      }
      if (!std::isfinite(fc) || (std::fabs(fc) > std::fabs(fx) && bt >= cfg.max_backtracks)) {
        throw NonConvergenceError("newton_solve: damping failed to reduce |f|", x, std::fabs(fx));
      }
    } else if (!std::isfinite(fc)) {
      throw NonConvergenceError("newton_solve: non-finite step without damping", x,
                                std::fabs(fx));
    }
    x = cand;
    fx = fc;
  }
  if (std::fabs(fx) <= cfg.tol) return x;
  throw NonConvergenceError("newton_solve: max iterations exceeded", x, std::fabs(fx));
}

/// Exact sampler for bivariate-normal pairs (m0, m1) with means (mean0, mean1),
/// common variance `var` and correlation `rho`, conditioned on m1 - m0 lying in
/// `interval`. The difference D = m1 - m0 ~ N(mean1 - mean0, 2(1-rho)var) is
/// drawn by inverse-CDF truncation, then m0 from its exact conditional given D.
std::vector<std::pair<double, double>> sample_strata_pair(double mean0, double mean1,
                                                          double var, double rho,
                                                          const Interval& interval, int count,
                                                          RngStream& rng);

/// Seed-taking overload.
std::vector<std::pair<double, double>> sample_strata_pair(double mean0, double mean1,
                                                          double var, double rho,
                                                          const Interval& interval, int count,
                                                          std::uint64_t seed);

/// Probability that a N(mean, sd^2) variate falls in [interval.lo, interval.hi).
double normal_interval_probability(double mean, double sd, const Interval& interval);

}  // namespace swpce
