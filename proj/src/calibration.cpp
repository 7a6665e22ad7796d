#include "swpce/calibration.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "swpce/special.hpp"

namespace swpce {

namespace {

struct TransitionPair {
  int period;
  double m_prev, m_cur;
};

std::vector<TransitionPair> transition_pairs(const TrialDataset& data) {
  std::vector<TransitionPair> pairs;
  const LaggedView view = observed_rows(data, true);
  for (const auto& r : view.rows) {
    if (r.z_lag == 0 && r.z == 1) pairs.push_back({r.period, r.m_lag, r.m});
  }
  return pairs;
}

double correlation(const std::vector<TransitionPair>& pairs) {
  const double n = static_cast<double>(pairs.size());
  double mu0 = 0.0, mu1 = 0.0;
  for (const auto& p : pairs) {
    mu0 += p.m_prev;
    mu1 += p.m_cur;
  }
  mu0 /= n;
  mu1 /= n;
  double v0 = 0.0, v1 = 0.0, cov = 0.0;
  for (const auto& p : pairs) {
    v0 += (p.m_prev - mu0) * (p.m_prev - mu0);
    v1 += (p.m_cur - mu1) * (p.m_cur - mu1);
    cov += (p.m_prev - mu0) * (p.m_cur - mu1);
  }
  // 1/(|C|-1) cancels in the ratio but keep the estimators as written.
  v0 /= n - 1.0;
  v1 /= n - 1.0;
  cov /= n - 1.0;
  return cov / std::sqrt(v0 * v1);
}

}  // namespace

SensitivityBounds estimate_rho_star(const TrialDataset& data, bool per_period) {
  const auto pairs = transition_pairs(data);
  if (pairs.size() < 3) {
    throw EstimationError("estimate_rho_star: transition set has |C| = " +
                              std::to_string(pairs.size()) + " complete pairs; need >= 3",
                          static_cast<int>(pairs.size()));
  }
  SensitivityBounds b;
  b.n_transition = static_cast<int>(pairs.size());
  b.rho_star = correlation(pairs);
  if (per_period) {
    std::map<int, std::vector<TransitionPair>> by_t;
    for (const auto& p : pairs) by_t[p.period].push_back(p);
    for (const auto& [t, ps] : by_t) {
      b.n_by_period[t] = static_cast<int>(ps.size());
      if (ps.size() >= 3) b.rho_star_by_period[t] = correlation(ps);
    }
  }
  return b;
}

namespace {

Eigen::Vector3d irls_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::Index n = x.rows();
  Eigen::Vector3d beta = Eigen::Vector3d::Zero();
  constexpr double kGradTol = 1e-8;
  constexpr int kMaxIter = 200;
  // Separation drives some fitted linear predictors to +-inf, which saturates
  // the probabilities and silently underflows the gradient; detect it on the
  // (rescaling-invariant) linear predictor scale.
  constexpr double kEtaMax = 25.0;
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < kMaxIter; ++it) {
    Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd p(n), w(n);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = expit(eta[i]);
      w[i] = std::max(p[i] * (1.0 - p[i]), 1e-12);
      ll += y[i] * eta[i] - log1pexp(eta[i]);
    }
    const Eigen::Vector3d grad = x.transpose() * (y - p);
    if (grad.lpNorm<Eigen::Infinity>() <= kGradTol) {
      if (eta.lpNorm<Eigen::Infinity>() > kEtaMax) {
        throw SeparationError(
            "fit_auxiliary_glm: fitted probabilities saturated (linear predictor beyond +-25); "
            "data are separated");
      }
      return beta;
    }

    Eigen::Matrix3d info = x.transpose() * w.asDiagonal() * x;
    Eigen::FullPivLU<Eigen::Matrix3d> lu(info);
    if (!lu.isInvertible()) {
      throw RankError("fit_auxiliary_glm: singular design (X'WX not invertible)");
    }
    Eigen::Vector3d step = lu.solve(grad);
    // Step-halving when the log-likelihood would decrease.
    double scale = 1.0;
    Eigen::Vector3d cand;
    double cand_ll;
    for (int h = 0; h < 40; ++h) {
      cand = beta + scale * step;
      cand_ll = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double e = x.row(i).dot(cand);
        cand_ll += y[i] * e - log1pexp(e);
      }
      if (cand_ll >= ll - 1e-12) break;
      scale *= 0.5;
    }
    beta = cand;
    if (beta.lpNorm<Eigen::Infinity>() > 30.0 && cand_ll - prev_ll < 1e-6) {
      throw SeparationError(
          "fit_auxiliary_glm: coefficient norm diverging; data are separated");
    }
    prev_ll = cand_ll;
  }
  // Final gradient check.
  Eigen::VectorXd eta = x * beta;
  Eigen::VectorXd p(n);
  for (Eigen::Index i = 0; i < n; ++i) p[i] = expit(eta[i]);
  if ((x.transpose() * (y - p)).lpNorm<Eigen::Infinity>() <= kGradTol) return beta;
  if (beta.lpNorm<Eigen::Infinity>() > 30.0) {
    throw SeparationError("fit_auxiliary_glm: coefficient norm diverging; data are separated");
  }
  throw NonConvergenceError("fit_auxiliary_glm: IRLS did not reach gradient tolerance",
                            beta.lpNorm<Eigen::Infinity>(), 0.0);
}

}  // namespace

AuxiliaryCoefficients fit_auxiliary_glm(const LaggedView& view) {
  std::vector<const LaggedRow*> rows;
  for (const auto& r : view.rows) {
    if (r.has_lag && r.z_lag == 0 && r.z == 1) rows.push_back(&r);
  }
  if (rows.size() < 4) {
    throw EstimationError("fit_auxiliary_glm: transition set has " +
                              std::to_string(rows.size()) + " rows; need >= 4",
                          static_cast<int>(rows.size()));
  }
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y_prev(n), y_cur(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = *rows[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    x(i, 1) = r.m;      // M_ijt
    x(i, 2) = r.m_lag;  // M_ij,t-1
    y_prev[i] = r.y_lag;
    y_cur[i] = r.y;
  }
  AuxiliaryCoefficients out;
  out.n_rows = static_cast<int>(n);
  out.zeta = irls_logistic(x, y_prev);
  out.theta = irls_logistic(x, y_cur);
  return out;
}

void lambda_bounds(const AuxiliaryCoefficients& aux, const PosteriorDraws& draws,
                   SensitivityBounds& bounds) {
  if (draws.n_draws() == 0) throw std::invalid_argument("lambda_bounds: no posterior draws");
  const double beta2 = draws.posterior_mean("beta2");
  const double beta3 = draws.posterior_mean("beta3");
  bounds.lambda0_lower = aux.zeta[1];
  bounds.lambda1_lower = aux.theta[2];
  bounds.lambda0_upper = beta2;
  bounds.lambda1_upper = beta2 + beta3;
}

std::vector<double> rho_grid(double rho_star) {
  if (!(rho_star > -1.0 && rho_star < 1.0)) {
    throw std::invalid_argument("rho_grid: rho* must lie in (-1, 1)");
  }
  std::vector<double> grid{rho_star};
  for (int k = static_cast<int>(std::ceil(rho_star * 10.0 - 1e-9)); k <= 9; ++k) {
    const double v = k / 10.0;
    if (v > rho_star + 1e-12) grid.push_back(v);
  }
  return grid;
}

double sample_lambda_one(double lower, double upper, RngStream& rng) {
  if (lower >= upper) return 0.5 * (lower + upper);
  const double u = rng.uniform01();
  return upper - (upper - lower) * std::sqrt(1.0 - u);
}

std::vector<std::pair<double, double>> sample_lambda(const SensitivityBounds& bounds, int count,
                                                     RngStream& rng) {
  if (count < 1) throw std::invalid_argument("sample_lambda: count must be >= 1");
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double l0 = sample_lambda_one(bounds.lambda0_lower, bounds.lambda0_upper, rng);
    const double l1 = sample_lambda_one(bounds.lambda1_lower, bounds.lambda1_upper, rng);
    out.emplace_back(l0, l1);
  }
  return out;
}

std::vector<std::pair<double, double>> sample_lambda(const SensitivityBounds& bounds, int count,
                                                     std::uint64_t seed) {
  RngStream rng(seed);
  return sample_lambda(bounds, count, rng);
}

SensitivityConfig SensitivityConfig::from_bounds(const SensitivityBounds& b) {
  SensitivityConfig cfg;
  cfg.bounds = b;
  cfg.rho_grid = swpce::rho_grid(b.rho_star);
  return cfg;
}

}  // namespace swpce
