#pragma once

#include <cstdint>
#include <vector>

#include "swpce/interval.hpp"
#include "swpce/model.hpp"
#include "swpce/rng.hpp"
#include "swpce/trial_data.hpp"

// Synthetic stepped-wedge data generator (staircase rollout by default) and a
// brute-force oracle for the principal causal effect under known truth. The
// oracle deliberately shares no integration, root-finding, or sampling code
// with the pce module: composite Simpson quadrature, bisection, Box-Muller
// normals, linear interpolation.

namespace swpce {

struct DesignSpec {
  int n_clusters = 8;
  int n_periods = 5;
  int cohort_size = 30;
  std::vector<int> start_periods;  // per cluster; empty = standard staircase
  double dropout_hazard = 0.0;     // in [0, 1)
  double dropout_m_coef = 0.0;     // optional MAR dependence on last observed M
  double dropout_y_coef = 0.0;     // ... and last observed Y

  /// Staircase assignment of start periods 2..T, clusters split evenly
  /// (pairs when n_clusters = 2(T-1), as in an 8-cluster, 5-period design).
  static std::vector<int> staircase(int n_clusters, int n_periods);
};

struct TruthParams {
  ModelParams params;
  std::vector<int> outcome_periods;  // default 2..T
  int mediator_lag = 0;
  double rho = 0.7;      // cross-world correlation used by the oracle
  double lambda0 = 0.0;  // structural sensitivity slopes used by the oracle
  double lambda1 = 0.0;
};

TrialDataset simulate_trial(const DesignSpec& design, const TruthParams& truth,
                            std::uint64_t seed);

TrialDataset apply_dropout(const TrialDataset& data, double hazard, std::uint64_t seed,
                           double m_coef = 0.0, double y_coef = 0.0);

struct OracleResult {
  double value = 0.0;
  double mc_se = 0.0;
  int n_kept = 0;
  double strata_probability = 0.0;
};

/// Brute-force PCE at the truth: samples the cross-world mediator pair from
/// the truth copula, filters to the interval, and averages the identification
/// integrand with all inner quantities obtained by fine-grid quadrature and
/// bisection on a dense grid. Independent of the pce module by construction.
OracleResult true_pce_oracle(const TruthParams& truth, int period, const Interval& interval,
                             int mc_size, std::uint64_t seed, bool identity_link = false);

}  // namespace swpce
