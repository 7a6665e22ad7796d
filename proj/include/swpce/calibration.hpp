#pragma once

#include <Eigen/Core>

#include <map>
#include <utility>
#include <vector>

#include "swpce/rng.hpp"
#include "swpce/sampler.hpp"
#include "swpce/trial_data.hpp"

// Calibration of the sensitivity parameters from the stepped-wedge structure:
// the lagged cross-arm correlation rho* over transition cells as a lower bound
// for the cross-world correlation, lambda bounds from auxiliary logistic
// regressions and the main outcome model, and the triangular draw rule.

namespace swpce {

struct SensitivityBounds {
  double rho_star = 0.0;
  int n_transition = 0;                       // |C|
  std::map<int, double> rho_star_by_period;   // periods with |C_t| >= 3 only
  std::map<int, int> n_by_period;
  double lambda0_lower = 0.0, lambda0_upper = 0.0;
  double lambda1_lower = 0.0, lambda1_upper = 0.0;

  bool lambda0_fallback() const { return lambda0_lower >= lambda0_upper; }
  bool lambda1_fallback() const { return lambda1_lower >= lambda1_upper; }
};

struct AuxiliaryCoefficients {
  Eigen::Vector3d zeta;   // Y_{ij,t-1} ~ 1 + M_ijt + M_{ij,t-1} on the transition set
  Eigen::Vector3d theta;  // Y_ijt     ~ 1 + M_ijt + M_{ij,t-1} on the transition set
  int n_rows = 0;
};

/// rho* over the transition set C = {(i,j,t): Z_{j,t-1}=0, Z_jt=1} with both
/// mediators observed; per-period estimates where |C_t| >= 3 when requested.
/// Throws EstimationError (naming |C|) when |C| < 3.
SensitivityBounds estimate_rho_star(const TrialDataset& data, bool per_period = false);

/// Maximum-likelihood logistic fits by IRLS (gradient norm <= 1e-8) on the
/// transition-set rows of the view.
AuxiliaryCoefficients fit_auxiliary_glm(const LaggedView& view);

/// lambda0 in [zeta_1, posterior mean beta_2]; lambda1 in [theta_2, posterior
/// mean (beta_2 + beta_3)].
void lambda_bounds(const AuxiliaryCoefficients& aux, const PosteriorDraws& draws,
                   SensitivityBounds& bounds);

/// {rho*} followed by multiples of 0.1 from ceil(rho* * 10)/10 up to 0.9.
std::vector<double> rho_grid(double rho_star);

/// Triangular draw with support [lower, upper] and mode at the lower bound;
/// point mass at the midpoint when lower >= upper.
double sample_lambda_one(double lower, double upper, RngStream& rng);
std::vector<std::pair<double, double>> sample_lambda(const SensitivityBounds& bounds, int count,
                                                     RngStream& rng);
std::vector<std::pair<double, double>> sample_lambda(const SensitivityBounds& bounds, int count,
                                                     std::uint64_t seed);

/// Everything the PCE stage needs about the sensitivity parameters.
struct SensitivityConfig {
  std::vector<double> rho_grid;
  SensitivityBounds bounds;
  bool per_draw_upper = false;  // recompute lambda uppers from each draw's betas
  static SensitivityConfig from_bounds(const SensitivityBounds& b);
};

}  // namespace swpce
