#include "swpce/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cstdio>

namespace swpce {

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string Interval::label() const {
  std::string left = std::isinf(lo) ? "(-inf" : "[" + format_double(lo);
  std::string right = std::isinf(hi) ? "inf)" : format_double(hi) + ")";
  return left + "," + right;
}

GaussHermiteRule gauss_hermite_rule(int n) {
  if (n < 1 || n > 128) {
    throw std::invalid_argument("gauss_hermite_rule: order must be in [1, 128]");
  }
  GaussHermiteRule rule;
  rule.order = n;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  rule.prob_weights.resize(n);
  const double sqrt_pi = std::sqrt(M_PI);
  if (n == 1) {
    rule.nodes[0] = 0.0;
    rule.weights[0] = sqrt_pi;
    rule.prob_weights[0] = 1.0;
    return rule;
  }
  // Jacobi matrix for physicists' Hermite polynomials: zero diagonal,
  // off-diagonal sqrt(k/2). Eigenvalues are the nodes; the squared first
  // eigvector components scaled by sqrt(pi) are the weights.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = std::sqrt(k / 2.0);
    jacobi(k - 1, k) = b;
    jacobi(k, k - 1) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  if (solver.info() != Eigen::Success) {
    throw Error("gauss_hermite_rule: eigen decomposition failed");
  }
  for (int k = 0; k < n; ++k) {
    rule.nodes[k] = solver.eigenvalues()(k);
    const double v0 = solver.eigenvectors()(0, k);
    rule.weights[k] = sqrt_pi * v0 * v0;
  }
  // Eigenvalues come out ascending already; enforce exact symmetry of the
  // node set to keep odd integrands at zero mean cancelling to rounding.
  for (int k = 0; k < n / 2; ++k) {
    const double mag = 0.5 * (std::fabs(rule.nodes[k]) + std::fabs(rule.nodes[n - 1 - k]));
    rule.nodes[k] = -mag;
    rule.nodes[n - 1 - k] = mag;
    const double w = 0.5 * (rule.weights[k] + rule.weights[n - 1 - k]);
    rule.weights[k] = w;
    rule.weights[n - 1 - k] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  for (int k = 0; k < n; ++k) rule.prob_weights[k] = rule.weights[k] / sqrt_pi;
  return rule;
}

double normal_interval_probability(double mean, double sd, const Interval& interval) {
  if (!(sd > 0.0)) throw std::invalid_argument("normal_interval_probability: sd must be > 0");
  const double p_hi =
      std::isinf(interval.hi) ? 1.0 : std_normal_cdf((interval.hi - mean) / sd);
  const double p_lo =
      std::isinf(interval.lo) ? 0.0 : std_normal_cdf((interval.lo - mean) / sd);
  return std::max(0.0, p_hi - p_lo);
}

std::vector<std::pair<double, double>> sample_strata_pair(double mean0, double mean1,
                                                          double var, double rho,
                                                          const Interval& interval, int count,
                                                          RngStream& rng) {
  if (!(var > 0.0)) throw std::invalid_argument("sample_strata_pair: var must be > 0");
  if (!(std::fabs(rho) < 1.0)) {
    throw std::invalid_argument("sample_strata_pair: |rho| must be < 1");
  }
  if (count < 0) throw std::invalid_argument("sample_strata_pair: negative count");

  const double mu_d = mean1 - mean0;
  const double sd_d = std::sqrt(2.0 * (1.0 - rho) * var);
  const double p_lo = std::isinf(interval.lo) ? 0.0 : std_normal_cdf((interval.lo - mu_d) / sd_d);
  const double p_hi = std::isinf(interval.hi) ? 1.0 : std_normal_cdf((interval.hi - mu_d) / sd_d);
  const double mass = p_hi - p_lo;
  if (!(mass > 1e-12)) {
    throw DegenerateStratumError("sample_strata_pair: stratum probability " +
                                 format_double(mass) + " below 1e-12 for interval " +
                                 interval.label());
  }
  // Exact conditional of m0 given the difference D: slope -1/2, residual
  // variance var (1+rho)/2.
  const double cond_sd = std::sqrt(var * (1.0 + rho) / 2.0);
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    double u = p_lo + mass * rng.uniform01();
    u = std::min(std::max(u, 1e-300), 1.0 - 1.1e-16);
    const double d = mu_d + sd_d * std_normal_quantile(u);
    const double m0 = mean0 - 0.5 * (d - mu_d) + cond_sd * rng.normal();
    out.emplace_back(m0, m0 + d);
  }
  return out;
}

std::vector<std::pair<double, double>> sample_strata_pair(double mean0, double mean1,
                                                          double var, double rho,
                                                          const Interval& interval, int count,
                                                          std::uint64_t seed) {
  RngStream rng(seed);
  return sample_strata_pair(mean0, mean1, var, rho, interval, count, rng);
}

}  // namespace swpce
