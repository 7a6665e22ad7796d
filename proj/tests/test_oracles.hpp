#pragma once

// Test-only oracles, independent of the library's integration and likelihood
// code paths: adaptive trapezoid integration against a normal density, a naive
// direct-summation log joint, finite differences, and KS helpers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "swpce/model.hpp"
#include "swpce/trial_data.hpp"

namespace oracle {

inline double normal_pdf(double x, double mean, double sd) {
  const double t = (x - mean) / sd;
  return std::exp(-0.5 * t * t) / (sd * std::sqrt(2.0 * M_PI));
}

inline double plain_expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// E[f(X)], X ~ N(mean, var), by trapezoid refinement until the value is
/// stable to rel_tol (or the grid hits 2^21 points).
inline double fine_grid_normal_expectation(double mean, double var,
                                           const std::function<double(double)>& f,
                                           double rel_tol = 1e-10) {
  if (var == 0.0) return f(mean);
  const double sd = std::sqrt(var);
  const double lo = mean - 10.0 * sd, hi = mean + 10.0 * sd;
  auto trapz = [&](int n) {
    const double h = (hi - lo) / n;
    double acc = 0.5 * (f(lo) * normal_pdf(lo, mean, sd) + f(hi) * normal_pdf(hi, mean, sd));
    for (int k = 1; k < n; ++k) {
      const double x = lo + k * h;
      acc += f(x) * normal_pdf(x, mean, sd);
    }
    return acc * h;
  };
  double prev = trapz(1 << 10);
  for (int n = 1 << 11; n <= (1 << 21); n <<= 1) {
    const double cur = trapz(n);
    if (std::fabs(cur - prev) <= rel_tol * std::max(1.0, std::fabs(cur))) return cur;
    prev = cur;
  }
  return prev;
}

/// Direct-summation log joint: re-derives every density from scratch with its
/// own scalar functions; shares no code with PosteriorTarget.
inline double naive_log_joint(const swpce::ModelParams& p, const swpce::LatentEffects& lat,
                              const swpce::LaggedView& view, const swpce::ModelStructure& s,
                              const swpce::HyperPriors& hp) {
  const double log2pi = std::log(2.0 * M_PI);
  double lp = 0.0;
  auto alpha1 = [&](int j) { return p.sigma_alpha1 * lat.z_alpha[static_cast<std::size_t>(2 * j)]; };
  auto alpha2 = [&](int j) {
    const double w = std::sqrt(1.0 - p.rho_alpha * p.rho_alpha);
    return p.sigma_alpha2 * (p.rho_alpha * lat.z_alpha[static_cast<std::size_t>(2 * j)] +
                             w * lat.z_alpha[static_cast<std::size_t>(2 * j + 1)]);
  };
  auto phi1 = [&](int i) { return p.sigma_phi1 * lat.z_phi[static_cast<std::size_t>(2 * i)]; };
  auto phi2 = [&](int i) {
    const double w = std::sqrt(1.0 - p.rho_phi * p.rho_phi);
    return p.sigma_phi2 * (p.rho_phi * lat.z_phi[static_cast<std::size_t>(2 * i)] +
                           w * lat.z_phi[static_cast<std::size_t>(2 * i + 1)]);
  };
  for (const auto& r : view.rows) {
    const double mu = p.eta1[static_cast<std::size_t>(r.period - 1)] + p.gamma1 * r.z +
                      alpha1(r.cluster) + phi1(r.individual);
    const double resid = (r.m - mu) / p.sigma_eps;
    lp += -0.5 * log2pi - std::log(p.sigma_eps) - 0.5 * resid * resid;
    const int o = s.outcome_index(r.period);
    if (o < 0) continue;
    double mstar = r.m;
    if (s.mediator_lag == 1) {
      if (!r.has_lag) continue;
      mstar = r.m_lag;
    }
    const double eta = p.eta2[static_cast<std::size_t>(o)] + p.beta1 * r.z + p.beta2 * mstar +
                       p.beta3 * r.z * mstar + p.beta4 * r.z_lag * mstar + alpha2(r.cluster) +
                       phi2(r.individual);
    const double prob = plain_expit(eta);
    lp += r.y == 1 ? std::log(prob) : std::log(1.0 - prob);
  }
  for (double z : lat.z_alpha) lp += -0.5 * z * z - 0.5 * log2pi;
  for (double z : lat.z_phi) lp += -0.5 * z * z - 0.5 * log2pi;

  const double sd = hp.fixed_effect_sd;
  std::vector<double> fixed;
  for (double e : p.eta1) fixed.push_back(e);
  for (double e : p.eta2) fixed.push_back(e);
  for (double b : {p.gamma1, p.beta1, p.beta2, p.beta3, p.beta4}) fixed.push_back(b);
  for (double x : fixed) lp += -0.5 * (x / sd) * (x / sd) - std::log(sd) - 0.5 * log2pi;
  for (double sig : {p.sigma_eps, p.sigma_alpha1, p.sigma_alpha2, p.sigma_phi1, p.sigma_phi2}) {
    lp += std::log(hp.scale_rate) - hp.scale_rate * sig;  // Exponential density
    lp += std::log(sig);                                  // Jacobian of sigma = exp(theta)
  }
  for (double rho : {p.rho_alpha, p.rho_phi}) {
    lp += -std::log(2.0);            // Uniform(-1, 1)
    lp += std::log(1.0 - rho * rho); // Jacobian of rho = tanh(u)
  }
  return lp;
}

/// One-sample KS distance against a CDF.
inline double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max(d, std::fabs(f - static_cast<double>(i) / n));
    d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

/// Two-sample KS distance.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) {
      ++i;
    } else {
      ++j;
    }
    d = std::max(d, std::fabs(static_cast<double>(i) / a.size() -
                              static_cast<double>(j) / b.size()));
  }
  return d;
}

inline double erf_normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace oracle
