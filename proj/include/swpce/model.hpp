#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "swpce/trial_data.hpp"

// Observed-data mixed-effects model: Gaussian mediator regression with
// per-period effects and a cluster/individual random intercept pair, plus a
// Bernoulli-logit outcome regression sharing correlated random intercepts.
// Evaluated on the unconstrained scale (log for sds, atanh for correlations)
// with non-centered latents, so HMC sees an unconstrained target.

namespace swpce {

struct ModelStructure {
  int n_periods = 0;
  std::vector<int> outcome_periods;  // sorted subset of 1..T, default 2..T
  int mediator_lag = 0;              // 0: contemporaneous regressor; 1: lagged
  int n_clusters = 0;
  int n_individuals = 0;

  static ModelStructure infer(const TrialDataset& data, std::vector<int> outcome_periods = {},
                              int mediator_lag = 0);

  int outcome_index(int period) const;  // position in outcome_periods, -1 if absent
  bool models_outcome(int period) const { return outcome_index(period) >= 0; }
};

struct ModelParams {
  std::vector<double> eta1;  // size n_periods
  std::vector<double> eta2;  // aligned with outcome_periods
  double gamma1 = 0.0;
  double beta1 = 0.0, beta2 = 0.0, beta3 = 0.0, beta4 = 0.0;
  double sigma_eps = 1.0;
  double sigma_alpha1 = 0.0, sigma_alpha2 = 0.0, rho_alpha = 0.0;
  double sigma_phi1 = 0.0, sigma_phi2 = 0.0, rho_phi = 0.0;

  double cov_alpha12() const { return rho_alpha * sigma_alpha1 * sigma_alpha2; }
  double cov_phi12() const { return rho_phi * sigma_phi1 * sigma_phi2; }
  /// Marginal variance of the mediator: Sigma_a11 + Sigma_p11 + sigma_eps^2.
  double mediator_var() const {
    return sigma_alpha1 * sigma_alpha1 + sigma_phi1 * sigma_phi1 + sigma_eps * sigma_eps;
  }
};

struct HyperPriors {
  double fixed_effect_sd = 3.1622776601683795;  // sqrt(10)
  double scale_rate = 1.0;                      // Exponential rate for all sds
};

struct LatentEffects {
  // Non-centered coordinates; constrained effects are L * z with L the
  // Cholesky factor of the 2x2 covariance.
  std::vector<double> z_alpha;  // 2 per cluster: (z1, z2)
  std::vector<double> z_phi;    // 2 per individual
};

/// Number of (non-latent) model coordinates: T + |outcome set| + 5 fixed + 7 scale/corr.
int param_dim(const ModelStructure& s);

/// Unconstrained coordinate names, parameters first, then latents when requested.
std::vector<std::string> param_names(const ModelStructure& s, bool with_latents = false);

Eigen::VectorXd to_unconstrained(const ModelParams& p, const ModelStructure& s);
ModelParams from_unconstrained(const Eigen::VectorXd& v, const ModelStructure& s);

/// Prepared posterior evaluator over a LaggedView (built once, evaluated many
/// times by the sampler). Coordinates: parameters, then z_alpha, then z_phi.
class PosteriorTarget {
 public:
  PosteriorTarget(const LaggedView& view, ModelStructure structure, HyperPriors hp);

  int dim() const { return dim_; }
  int n_param() const { return n_param_; }
  const ModelStructure& structure() const { return structure_; }
  std::vector<std::string> coordinate_names() const;

  double log_joint(const Eigen::VectorXd& v) const;
  double log_joint_grad(const Eigen::VectorXd& v, Eigen::VectorXd& grad) const;

  Eigen::VectorXd pack(const ModelParams& p, const LatentEffects& z) const;

 private:
  double eval(const Eigen::VectorXd& v, Eigen::VectorXd* grad_out) const;

  struct MRow {
    int t;  // 0-based period index
    double z;
    double m;
    int cl;
    int ind;
  };
  struct YRow {
    int o;  // outcome-period index
    double y;
    double z;
    double xm;      // mediator regressor m*
    double xmz;     // z * m*
    double xmzlag;  // z_lag * m*
    int cl;
    int ind;
  };

  ModelStructure structure_;
  HyperPriors hp_;
  std::vector<MRow> m_rows_;
  std::vector<YRow> y_rows_;
  int n_param_ = 0;
  int dim_ = 0;
};

/// Convenience entry point: evaluates the full log joint (likelihood + latent
/// density + priors + transform Jacobian) at constrained parameters.
double log_joint(const ModelParams& p, const LatentEffects& latents, const LaggedView& view,
                 const ModelStructure& s, const HyperPriors& hp);

}  // namespace swpce
