#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "swpce/calibration.hpp"
#include "swpce/interval.hpp"
#include "swpce/model.hpp"
#include "swpce/numerics.hpp"
#include "swpce/sampler.hpp"

// Identification engine: per posterior draw and sensitivity setting, the
// principal causal effect over intervals of the cross-world mediator
// difference. The numerator/denominator ratio is computed as a conditional
// mean over pairs sampled exactly from the truncated copula.

namespace swpce {

enum class Link { logit, identity };

struct PceQuery {
  int period = 2;
  std::vector<Interval> intervals;  // default three-stratum partition, delta = 0.5
  double rho = 0.7;
  int mc_size = 2000;
  Link link = Link::logit;
  int quadrature_order = 20;
  std::uint64_t seed = 0;
  bool exact_delta = false;    // solve per sampled point instead of interpolating
  int delta_grid_size = 512;

  static std::vector<Interval> default_partition(double delta = 0.5);
};

struct JointMediatorLaw {
  double mu0 = 0.0;  // eta_1t (+ gamma_0 = 0)
  double mu1 = 0.0;  // mu0 + gamma_1
  double var = 1.0;  // Sigma_a11 + Sigma_p11 + sigma_eps^2, shared by both arms
  double rho = 0.0;
};

JointMediatorLaw joint_mediator_law(const ModelParams& p, const ModelStructure& s, int period,
                                    double rho);

/// P(lo <= M(1) - M(0) < hi) under the law's copula.
double strata_probability(const JointMediatorLaw& law, const Interval& interval);

/// E(Y | M = m, treatment initiation sequence z) by Gauss-Hermite quadrature
/// over the conditional random-effect law. Strictly inside (0, 1).
double conditional_outcome_mean(const ModelParams& p, const ModelStructure& s, int period,
                                double m, int z, const GaussHermiteRule& rule);

/// The stratum-level intercept solving the convolution equation; closed form
/// for the identity link (force_newton runs the Newton path there anyway).
double solve_delta(const ModelParams& p, const ModelStructure& s, int period, double m, int z,
                   double lambda_z, const JointMediatorLaw& law, Link link,
                   const GaussHermiteRule& rule, bool force_newton = false);

struct PceDrawResult {
  double numerator = 0.0;
  double denominator = 0.0;
  double pce = 0.0;
  double mc_se = 0.0;
};

PceDrawResult pce_for_draw(const ModelParams& p, const ModelStructure& s, const PceQuery& query,
                           double lambda0, double lambda1, const Interval& interval,
                           RngStream& rng);

struct PceCellSummary {
  int period = 0;
  Interval interval;
  double rho = 0.0;
  double delta = 0.0;  // interval half-width tag for sweep output; 0 when unused
  double mean = 0.0, q025 = 0.0, q975 = 0.0;
  int n_ok = 0, n_failed = 0;
};

struct PceDrawRecord {
  int period = 0;
  std::string interval_label;
  double rho = 0.0;
  int draw = 0;
  double lambda0 = 0.0, lambda1 = 0.0;
  double numerator = 0.0, denominator = 0.0, pce = 0.0;
  bool ok = false;
};

struct PceEstimate {
  std::vector<PceCellSummary> cells;
  std::vector<PceDrawRecord> samples;  // long format, one row per (cell, draw)
  int total_failed = 0;
};

/// Step 3 of the pipeline: every rho in the grid x interval x period, one PCE
/// per posterior draw with a fresh lambda draw from the triangular rule.
/// Draw-level failures are recorded and skipped; more than 5% failures raise.
PceEstimate pce_posterior(const PosteriorDraws& draws, const ModelStructure& s,
                          const SensitivityConfig& sens, const PceQuery& query_base,
                          const std::vector<int>& periods, int threads = 0);

/// Central posterior summary (mean and equal-tailed 95% interval).
double quantile(std::vector<double> values, double p);

}  // namespace swpce
