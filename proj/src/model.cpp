#include "swpce/model.hpp"

#include <algorithm>
#include <cmath>

#include "swpce/special.hpp"

namespace swpce {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

ModelStructure ModelStructure::infer(const TrialDataset& data, std::vector<int> outcome_periods,
                                     int mediator_lag) {
  ModelStructure s;
  s.n_periods = data.n_periods();
  s.n_clusters = data.n_clusters();
  s.n_individuals = data.n_individuals();
  s.mediator_lag = mediator_lag;
  if (outcome_periods.empty()) {
    for (int t = 2; t <= s.n_periods; ++t) outcome_periods.push_back(t);
  }
  std::sort(outcome_periods.begin(), outcome_periods.end());
  for (int t : outcome_periods) {
    if (t < 1 || t > s.n_periods) {
      throw std::invalid_argument("outcome period " + std::to_string(t) + " outside 1.." +
                                  std::to_string(s.n_periods));
    }
  }
  s.outcome_periods = std::move(outcome_periods);
  return s;
}

int ModelStructure::outcome_index(int period) const {
  for (std::size_t k = 0; k < outcome_periods.size(); ++k) {
    if (outcome_periods[k] == period) return static_cast<int>(k);
  }
  return -1;
}

int param_dim(const ModelStructure& s) {
  return s.n_periods + static_cast<int>(s.outcome_periods.size()) + 5 + 7;
}

std::vector<std::string> param_names(const ModelStructure& s, bool with_latents) {
  std::vector<std::string> names;
  for (int t = 1; t <= s.n_periods; ++t) names.push_back("eta1[" + std::to_string(t) + "]");
  for (int t : s.outcome_periods) names.push_back("eta2[" + std::to_string(t) + "]");
  names.insert(names.end(), {"gamma1", "beta1", "beta2", "beta3", "beta4", "log_sigma_eps",
                             "log_sigma_alpha1", "log_sigma_alpha2", "atanh_rho_alpha",
                             "log_sigma_phi1", "log_sigma_phi2", "atanh_rho_phi"});
  if (with_latents) {
    for (int j = 0; j < s.n_clusters; ++j) {
      names.push_back("z_alpha1[" + std::to_string(j) + "]");
      names.push_back("z_alpha2[" + std::to_string(j) + "]");
    }
    for (int i = 0; i < s.n_individuals; ++i) {
      names.push_back("z_phi1[" + std::to_string(i) + "]");
      names.push_back("z_phi2[" + std::to_string(i) + "]");
    }
  }
  return names;
}

Eigen::VectorXd to_unconstrained(const ModelParams& p, const ModelStructure& s) {
  const int T = s.n_periods;
  const int K = static_cast<int>(s.outcome_periods.size());
  if (static_cast<int>(p.eta1.size()) != T || static_cast<int>(p.eta2.size()) != K) {
    throw std::invalid_argument("to_unconstrained: eta dimensions disagree with structure");
  }
  Eigen::VectorXd v(param_dim(s));
  int k = 0;
  for (int t = 0; t < T; ++t) v[k++] = p.eta1[static_cast<std::size_t>(t)];
  for (int t = 0; t < K; ++t) v[k++] = p.eta2[static_cast<std::size_t>(t)];
  v[k++] = p.gamma1;
  v[k++] = p.beta1;
  v[k++] = p.beta2;
  v[k++] = p.beta3;
  v[k++] = p.beta4;
  v[k++] = std::log(p.sigma_eps);
  v[k++] = std::log(p.sigma_alpha1);
  v[k++] = std::log(p.sigma_alpha2);
  v[k++] = std::atanh(p.rho_alpha);
  v[k++] = std::log(p.sigma_phi1);
  v[k++] = std::log(p.sigma_phi2);
  v[k++] = std::atanh(p.rho_phi);
  return v;
}

ModelParams from_unconstrained(const Eigen::VectorXd& v, const ModelStructure& s) {
  const int T = s.n_periods;
  const int K = static_cast<int>(s.outcome_periods.size());
  if (v.size() < param_dim(s)) {
    throw std::invalid_argument("from_unconstrained: vector shorter than parameter block");
  }
  ModelParams p;
  int k = 0;
  p.eta1.resize(static_cast<std::size_t>(T));
  p.eta2.resize(static_cast<std::size_t>(K));
  for (int t = 0; t < T; ++t) p.eta1[static_cast<std::size_t>(t)] = v[k++];
  for (int t = 0; t < K; ++t) p.eta2[static_cast<std::size_t>(t)] = v[k++];
  p.gamma1 = v[k++];
  p.beta1 = v[k++];
  p.beta2 = v[k++];
  p.beta3 = v[k++];
  p.beta4 = v[k++];
  p.sigma_eps = std::exp(v[k++]);
  p.sigma_alpha1 = std::exp(v[k++]);
  p.sigma_alpha2 = std::exp(v[k++]);
  p.rho_alpha = std::tanh(v[k++]);
  p.sigma_phi1 = std::exp(v[k++]);
  p.sigma_phi2 = std::exp(v[k++]);
  p.rho_phi = std::tanh(v[k++]);
  return p;
}

PosteriorTarget::PosteriorTarget(const LaggedView& view, ModelStructure structure, HyperPriors hp)
    : structure_(std::move(structure)), hp_(hp) {
  n_param_ = param_dim(structure_);
  dim_ = n_param_ + 2 * structure_.n_clusters + 2 * structure_.n_individuals;
  for (const auto& r : view.rows) {
    if (r.cluster < 0 || r.cluster >= structure_.n_clusters || r.individual < 0 ||
        r.individual >= structure_.n_individuals) {
      throw std::out_of_range("PosteriorTarget: row references unknown cluster or individual");
    }
    m_rows_.push_back({r.period - 1, static_cast<double>(r.z), r.m, r.cluster, r.individual});
    const int o = structure_.outcome_index(r.period);
    if (o < 0) continue;
    double mstar;
    if (structure_.mediator_lag == 1) {
      if (!r.has_lag) continue;  // no lagged regressor available
      mstar = r.m_lag;
    } else {
      mstar = r.m;
    }
    y_rows_.push_back({o, static_cast<double>(r.y), static_cast<double>(r.z), mstar,
                       r.z * mstar, r.z_lag * mstar, r.cluster, r.individual});
  }
}

std::vector<std::string> PosteriorTarget::coordinate_names() const {
  return param_names(structure_, true);
}

double PosteriorTarget::log_joint(const Eigen::VectorXd& v) const {
  return eval(v, nullptr);
}

double PosteriorTarget::log_joint_grad(const Eigen::VectorXd& v, Eigen::VectorXd& grad) const {
  grad.resize(dim_);
  return eval(v, &grad);
}

double PosteriorTarget::eval(const Eigen::VectorXd& v, Eigen::VectorXd* grad_out) const {
  const bool want_grad = grad_out != nullptr;
  Eigen::VectorXd unused;
  Eigen::VectorXd& grad = want_grad ? *grad_out : unused;
  const int T = structure_.n_periods;
  const int K = static_cast<int>(structure_.outcome_periods.size());
  const int J = structure_.n_clusters;
  const int N = structure_.n_individuals;
  const int i_eta1 = 0, i_eta2 = T, i_gamma = T + K, i_beta = T + K + 1;
  const int i_lse = T + K + 5, i_lsa1 = i_lse + 1, i_lsa2 = i_lse + 2, i_ura = i_lse + 3;
  const int i_lsp1 = i_lse + 4, i_lsp2 = i_lse + 5, i_urp = i_lse + 6;
  const int i_za = n_param_, i_zp = n_param_ + 2 * J;

  const double gamma1 = v[i_gamma];
  const double beta1 = v[i_beta], beta2 = v[i_beta + 1], beta3 = v[i_beta + 2],
               beta4 = v[i_beta + 3];
  const double sig_eps = std::exp(v[i_lse]);
  const double sa1 = std::exp(v[i_lsa1]), sa2 = std::exp(v[i_lsa2]);
  const double ra = std::tanh(v[i_ura]);
  const double sp1 = std::exp(v[i_lsp1]), sp2 = std::exp(v[i_lsp2]);
  const double rp = std::tanh(v[i_urp]);
  const double wa = std::sqrt(1.0 - ra * ra), wp = std::sqrt(1.0 - rp * rp);
  const double inv_var_eps = 1.0 / (sig_eps * sig_eps);

  double lp = 0.0;
  if (want_grad) grad.setZero(dim_);

  // Accumulators for random-effect score sums.
  Eigen::VectorXd gm_cl = Eigen::VectorXd::Zero(J), gy_cl = Eigen::VectorXd::Zero(J);
  Eigen::VectorXd gm_in = Eigen::VectorXd::Zero(N), gy_in = Eigen::VectorXd::Zero(N);

  // Mediator likelihood.
  const double log_sig_eps = v[i_lse];
  double sum_r2 = 0.0;
  for (const auto& row : m_rows_) {
    const double alpha1 = sa1 * v[i_za + 2 * row.cl];
    const double phi1 = sp1 * v[i_zp + 2 * row.ind];
    const double mu = v[i_eta1 + row.t] + gamma1 * row.z + alpha1 + phi1;
    const double r = row.m - mu;
    sum_r2 += r * r;
    if (want_grad) {
      const double score = r * inv_var_eps;
      grad[i_eta1 + row.t] += score;
      grad[i_gamma] += score * row.z;
      gm_cl[row.cl] += score;
      gm_in[row.ind] += score;
    }
  }
  lp += -0.5 * static_cast<double>(m_rows_.size()) * kLog2Pi -
        static_cast<double>(m_rows_.size()) * log_sig_eps - 0.5 * sum_r2 * inv_var_eps;

  // Outcome likelihood.
  for (const auto& row : y_rows_) {
    const double alpha2 = sa2 * (ra * v[i_za + 2 * row.cl] + wa * v[i_za + 2 * row.cl + 1]);
    const double phi2 = sp2 * (rp * v[i_zp + 2 * row.ind] + wp * v[i_zp + 2 * row.ind + 1]);
    const double eta = v[i_eta2 + row.o] + beta1 * row.z + beta2 * row.xm + beta3 * row.xmz +
                       beta4 * row.xmzlag + alpha2 + phi2;
    lp += row.y * eta - log1pexp(eta);
    if (want_grad) {
      const double score = row.y - expit(eta);
      grad[i_eta2 + row.o] += score;
      grad[i_beta] += score * row.z;
      grad[i_beta + 1] += score * row.xm;
      grad[i_beta + 2] += score * row.xmz;
      grad[i_beta + 3] += score * row.xmzlag;
      gy_cl[row.cl] += score;
      gy_in[row.ind] += score;
    }
  }

  // Standard-normal latent density and latent gradients.
  for (int j = 0; j < J; ++j) {
    const double z1 = v[i_za + 2 * j], z2 = v[i_za + 2 * j + 1];
    lp += -0.5 * (z1 * z1 + z2 * z2) - kLog2Pi;
    if (want_grad) {
      grad[i_za + 2 * j] += gm_cl[j] * sa1 + gy_cl[j] * sa2 * ra - z1;
      grad[i_za + 2 * j + 1] += gy_cl[j] * sa2 * wa - z2;
    }
  }
  for (int i = 0; i < N; ++i) {
    const double z1 = v[i_zp + 2 * i], z2 = v[i_zp + 2 * i + 1];
    lp += -0.5 * (z1 * z1 + z2 * z2) - kLog2Pi;
    if (want_grad) {
      grad[i_zp + 2 * i] += gm_in[i] * sp1 + gy_in[i] * sp2 * rp - z1;
      grad[i_zp + 2 * i + 1] += gy_in[i] * sp2 * wp - z2;
    }
  }

  // Fixed-effect priors N(0, sd^2).
  const double sd = hp_.fixed_effect_sd;
  const double inv_var_fix = 1.0 / (sd * sd);
  const int n_fixed = T + K + 5;
  for (int k = 0; k < n_fixed; ++k) {
    lp += -0.5 * v[k] * v[k] * inv_var_fix - std::log(sd) - 0.5 * kLog2Pi;
    if (want_grad) grad[k] += -v[k] * inv_var_fix;
  }

  // Exponential(rate) priors on sds, in log coordinates (Jacobian = theta).
  const double rate = hp_.scale_rate;
  const double log_rate = std::log(rate);
  const int scale_idx[5] = {i_lse, i_lsa1, i_lsa2, i_lsp1, i_lsp2};
  const double scale_val[5] = {sig_eps, sa1, sa2, sp1, sp2};
  for (int k = 0; k < 5; ++k) {
    lp += log_rate - rate * scale_val[k] + v[scale_idx[k]];
    if (want_grad) grad[scale_idx[k]] += -rate * scale_val[k] + 1.0;
  }

  // Uniform(-1,1) priors on correlations, with the tanh Jacobian log(1 - rho^2).
  const int corr_idx[2] = {i_ura, i_urp};
  const double corr_val[2] = {ra, rp};
  for (int k = 0; k < 2; ++k) {
    lp += -std::log(2.0) + std::log1p(-corr_val[k] * corr_val[k]);
    if (want_grad) grad[corr_idx[k]] += -2.0 * corr_val[k];
  }

  if (want_grad) {
    // Scale gradients through the non-centered latents and the likelihoods.
    double acc = 0.0;
    acc = sum_r2 * inv_var_eps - static_cast<double>(m_rows_.size());
    grad[i_lse] += acc;

    double d_sa1 = 0.0, d_sa2 = 0.0, d_ra = 0.0;
    for (int j = 0; j < J; ++j) {
      const double z1 = v[i_za + 2 * j], z2 = v[i_za + 2 * j + 1];
      d_sa1 += gm_cl[j] * z1;
      d_sa2 += gy_cl[j] * (ra * z1 + wa * z2);
      d_ra += gy_cl[j] * (z1 * (1.0 - ra * ra) - ra * wa * z2);
    }
    grad[i_lsa1] += d_sa1 * sa1;
    grad[i_lsa2] += d_sa2 * sa2;
    grad[i_ura] += d_ra * sa2;

    double d_sp1 = 0.0, d_sp2 = 0.0, d_rp = 0.0;
    for (int i = 0; i < N; ++i) {
      const double z1 = v[i_zp + 2 * i], z2 = v[i_zp + 2 * i + 1];
      d_sp1 += gm_in[i] * z1;
      d_sp2 += gy_in[i] * (rp * z1 + wp * z2);
      d_rp += gy_in[i] * (z1 * (1.0 - rp * rp) - rp * wp * z2);
    }
    grad[i_lsp1] += d_sp1 * sp1;
    grad[i_lsp2] += d_sp2 * sp2;
    grad[i_urp] += d_rp * sp2;
  }

  return lp;
}

Eigen::VectorXd PosteriorTarget::pack(const ModelParams& p, const LatentEffects& z) const {
  if (static_cast<int>(z.z_alpha.size()) != 2 * structure_.n_clusters ||
      static_cast<int>(z.z_phi.size()) != 2 * structure_.n_individuals) {
    throw std::invalid_argument("pack: latent dimensions disagree with structure");
  }
  Eigen::VectorXd v(dim_);
  v.head(n_param_) = to_unconstrained(p, structure_);
  for (std::size_t k = 0; k < z.z_alpha.size(); ++k) {
    v[n_param_ + static_cast<int>(k)] = z.z_alpha[k];
  }
  const int off = n_param_ + 2 * structure_.n_clusters;
  for (std::size_t k = 0; k < z.z_phi.size(); ++k) {
    v[off + static_cast<int>(k)] = z.z_phi[k];
  }
  return v;
}

double log_joint(const ModelParams& p, const LatentEffects& latents, const LaggedView& view,
                 const ModelStructure& s, const HyperPriors& hp) {
  PosteriorTarget target(view, s, hp);
  return target.log_joint(target.pack(p, latents));
}

}  // namespace swpce
