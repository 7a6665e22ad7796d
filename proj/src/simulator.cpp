#include "swpce/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "swpce/special.hpp"

namespace swpce {

namespace {

void check_truth(const TruthParams& truth, int n_periods) {
  const ModelParams& p = truth.params;
  if (static_cast<int>(p.eta1.size()) != n_periods) {
    throw std::invalid_argument("simulate_trial: eta1 must have one entry per period");
  }
  if (p.eta2.size() != truth.outcome_periods.size()) {
    throw std::invalid_argument("simulate_trial: eta2 must align with outcome_periods");
  }
  const double sds[5] = {p.sigma_eps, p.sigma_alpha1, p.sigma_alpha2, p.sigma_phi1, p.sigma_phi2};
  for (double s : sds) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("simulate_trial: sd parameters must be finite and >= 0");
    }
  }
  if (!(std::fabs(p.rho_alpha) <= 1.0) || !(std::fabs(p.rho_phi) <= 1.0)) {
    throw std::invalid_argument("simulate_trial: correlations must lie in [-1, 1]");
  }
}

std::string padded_id(char prefix, int value, int width) {
  std::string digits = std::to_string(value);
  std::string out(1, prefix);
  out.append(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0');
  out += digits;
  return out;
}

int id_width(int n) { return static_cast<int>(std::to_string(n).size()); }

}  // namespace

std::vector<int> DesignSpec::staircase(int n_clusters, int n_periods) {
  if (n_clusters < 1 || n_periods < 2) {
    throw std::invalid_argument("staircase: need >= 1 cluster and >= 2 periods");
  }
  std::vector<int> starts(static_cast<std::size_t>(n_clusters));
  const int steps = n_periods - 1;
  for (int j = 0; j < n_clusters; ++j) {
    starts[static_cast<std::size_t>(j)] = 2 + (j * steps) / n_clusters;
  }
  return starts;
}

TrialDataset simulate_trial(const DesignSpec& design, const TruthParams& truth,
                            std::uint64_t seed) {
  const int J = design.n_clusters, T = design.n_periods, n = design.cohort_size;
  if (J < 1 || T < 1 || n < 1) throw std::invalid_argument("simulate_trial: empty design");
  TruthParams tr = truth;
  if (tr.outcome_periods.empty()) {
    for (int t = 2; t <= T; ++t) tr.outcome_periods.push_back(t);
    if (tr.params.eta2.empty()) {
      tr.params.eta2.assign(tr.outcome_periods.size(), 0.0);
    }
  }
  check_truth(tr, T);
  std::vector<int> starts =
      design.start_periods.empty() ? DesignSpec::staircase(J, T) : design.start_periods;
  if (static_cast<int>(starts.size()) != J) {
    throw std::invalid_argument("simulate_trial: start_periods size must equal n_clusters");
  }
  for (int s : starts) {
    if (s < 2) throw std::invalid_argument("simulate_trial: every cluster starts under control");
  }

  const ModelParams& p = tr.params;
  const double wa = std::sqrt(std::max(0.0, 1.0 - p.rho_alpha * p.rho_alpha));
  const double wp = std::sqrt(std::max(0.0, 1.0 - p.rho_phi * p.rho_phi));

  const RngStream root(seed);
  const int cw = id_width(J), iw = id_width(n);
  std::vector<ObservationRecord> records;
  records.reserve(static_cast<std::size_t>(J) * n * T);

  for (int j = 0; j < J; ++j) {
    RngStream crng = root.fork(1, static_cast<std::uint64_t>(j));
    const double u1 = crng.normal(), u2 = crng.normal();
    const double alpha1 = p.sigma_alpha1 * u1;
    const double alpha2 = p.sigma_alpha2 * (p.rho_alpha * u1 + wa * u2);
    const std::string cid = padded_id('c', j + 1, cw);
    for (int i = 0; i < n; ++i) {
      RngStream irng = root.fork(2, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(i));
      const double v1 = irng.normal(), v2 = irng.normal();
      const double phi1 = p.sigma_phi1 * v1;
      const double phi2 = p.sigma_phi2 * (p.rho_phi * v1 + wp * v2);
      const std::string iid = padded_id('i', i + 1, iw);
      std::vector<double> m(static_cast<std::size_t>(T));
      std::vector<int> z(static_cast<std::size_t>(T));
      for (int t = 1; t <= T; ++t) {
        z[static_cast<std::size_t>(t - 1)] = t >= starts[static_cast<std::size_t>(j)] ? 1 : 0;
        const double eps = p.sigma_eps * irng.normal();
        m[static_cast<std::size_t>(t - 1)] = p.eta1[static_cast<std::size_t>(t - 1)] +
                                             p.gamma1 * z[static_cast<std::size_t>(t - 1)] +
                                             alpha1 + phi1 + eps;
      }
      for (int t = 1; t <= T; ++t) {
        ObservationRecord r;
        r.cluster_id = cid;
        r.individual_id = iid;
        r.period = t;
        r.treatment = z[static_cast<std::size_t>(t - 1)];
        r.mediator = m[static_cast<std::size_t>(t - 1)];
        int o = -1;
        for (std::size_t k = 0; k < tr.outcome_periods.size(); ++k) {
          if (tr.outcome_periods[k] == t) o = static_cast<int>(k);
        }
        if (o >= 0) {
          const double mstar = tr.mediator_lag == 1 ? (t >= 2 ? m[static_cast<std::size_t>(t - 2)] : 0.0)
                                                    : m[static_cast<std::size_t>(t - 1)];
          const int zlag = t >= 2 ? z[static_cast<std::size_t>(t - 2)] : 0;
          const double lp = p.eta2[static_cast<std::size_t>(o)] +
                            p.beta1 * z[static_cast<std::size_t>(t - 1)] + p.beta2 * mstar +
                            p.beta3 * z[static_cast<std::size_t>(t - 1)] * mstar +
                            p.beta4 * zlag * mstar + alpha2 + phi2;
          r.outcome = irng.bernoulli(expit(lp));
        } else {
          // Structurally-zero outcome outside the modeled periods (baseline).
          r.outcome = 0;
        }
        records.push_back(std::move(r));
      }
    }
  }
  TrialDataset data = TrialDataset::from_records(std::move(records));
  if (design.dropout_hazard > 0.0) {
    data = apply_dropout(data, design.dropout_hazard, RngStream(seed).fork(3).next_u64(),
                         design.dropout_m_coef, design.dropout_y_coef);
  }
  return data;
}

TrialDataset apply_dropout(const TrialDataset& data, double hazard, std::uint64_t seed,
                           double m_coef, double y_coef) {
  if (!(hazard >= 0.0 && hazard < 1.0)) {
    throw std::invalid_argument("apply_dropout: hazard must lie in [0, 1)");
  }
  if (hazard == 0.0) return data;
  const double base_logit = logit(hazard);
  const RngStream root(seed);
  const int T = data.n_periods();

  std::map<std::pair<std::string, std::string>, std::vector<ObservationRecord>> by_ind;
  for (const auto& r : data.records()) by_ind[{r.cluster_id, r.individual_id}].push_back(r);

  std::vector<ObservationRecord> out;
  out.reserve(data.records().size());
  std::uint64_t ind_counter = 0;
  for (auto& [key, recs] : by_ind) {
    RngStream rng = root.fork(4, ind_counter++);
    std::sort(recs.begin(), recs.end(),
              [](const ObservationRecord& a, const ObservationRecord& b) {
                return a.period < b.period;
              });
    bool dropped = false;
    double last_m = 0.0;
    int last_y = 0;
    bool have_last = false;
    for (auto& r : recs) {
      if (!dropped && r.period >= 2 && r.period <= T) {
        double lp = base_logit;
        if (have_last) lp += m_coef * last_m + y_coef * last_y;
        if (rng.uniform01() < expit(lp)) dropped = true;
      }
      if (dropped) {
        r.mediator.reset();
        r.outcome.reset();
      } else if (r.observed()) {
        last_m = *r.mediator;
        last_y = *r.outcome;
        have_last = true;
      } else {
        dropped = true;  // preserve monotonicity past pre-existing missingness
      }
      out.push_back(r);
    }
  }
  return TrialDataset::from_records(std::move(out));
}

namespace {

// Composite Simpson rule over [lo, hi] with an even number of panels.
template <class F>
double simpson(double lo, double hi, int panels, F&& f) {
  if (panels % 2 == 1) ++panels;
  const double h = (hi - lo) / panels;
  double acc = f(lo) + f(hi);
  for (int k = 1; k < panels; ++k) {
    acc += f(lo + k * h) * (k % 2 == 1 ? 4.0 : 2.0);
  }
  return acc * h / 3.0;
}

double normal_pdf(double x, double mean, double sd) {
  const double t = (x - mean) / sd;
  return std::exp(-0.5 * t * t) / (sd * std::sqrt(2.0 * M_PI));
}

constexpr int kOraclePanels = 2000;
constexpr int kOracleGrid = 2001;
constexpr double kOracleSpan = 9.0;  // integration half-width in sds

struct OracleModel {
  const ModelParams& p;
  double eta1t;
  double eta2t;
  double v;       // marginal mediator variance
  double c;       // Sigma_a12 + Sigma_p12
  double var_u;   // conditional variance of alpha2 + phi2 given M
  double rho;

  double mu_z(int z) const { return eta1t + p.gamma1 * z; }

  // E(Y | M = m, z-sequence) by Simpson over the conditional random effect.
  double outcome_mean(double m, int z) const {
    const double mean_u = c / v * (m - mu_z(z));
    const double lin = eta2t + p.beta1 * z + p.beta2 * m + p.beta3 * m * z;
    if (var_u <= 0.0) return expit(lin + mean_u);
    const double sd_u = std::sqrt(var_u);
    return simpson(mean_u - kOracleSpan * sd_u, mean_u + kOracleSpan * sd_u, kOraclePanels,
                   [&](double u) { return expit(lin + u) * normal_pdf(u, mean_u, sd_u); });
  }

  // Integral of expit(delta + lambda m*) against the cross-world conditional law.
  double convolution(double delta, double lambda, double mstar_mean, double mstar_sd) const {
    if (mstar_sd <= 0.0) return expit(delta + lambda * mstar_mean);
    return simpson(mstar_mean - kOracleSpan * mstar_sd, mstar_mean + kOracleSpan * mstar_sd,
                   kOraclePanels, [&](double ms) {
                     return expit(delta + lambda * ms) * normal_pdf(ms, mstar_mean, mstar_sd);
                   });
  }

  double solve_delta_bisect(double m, int z, double lambda, bool identity_link) const {
    const double ey = outcome_mean(m, z);
    const double mstar_mean = mu_z(1 - z) + rho * (m - mu_z(z));
    const double mstar_sd = std::sqrt(std::max(0.0, (1.0 - rho * rho) * v));
    if (identity_link) {
      return ey - lambda * mstar_mean;
    }
    auto f = [&](double d) { return convolution(d, lambda, mstar_mean, mstar_sd) - ey; };
    double lo = -60.0, hi = 60.0;
    while (f(lo) > 0.0 && lo > -400.0) lo -= 60.0;
    while (f(hi) < 0.0 && hi < 400.0) hi += 60.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double fm = f(mid);
      if (std::fabs(fm) < 1e-12 || hi - lo < 1e-13 * std::max(1.0, std::fabs(mid))) return mid;
      (fm < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
};

struct LinearTable {
  double lo, step;
  std::vector<double> values;
  double at(double x) const {
    const double pos = (x - lo) / step;
    const int n = static_cast<int>(values.size());
    if (pos <= 0.0) return values.front();
    if (pos >= n - 1.0) return values.back();
    const int k = static_cast<int>(pos);
    const double w = pos - k;
    return values[static_cast<std::size_t>(k)] * (1.0 - w) +
           values[static_cast<std::size_t>(k + 1)] * w;
  }
};

}  // namespace

OracleResult true_pce_oracle(const TruthParams& truth, int period, const Interval& interval,
                             int mc_size, std::uint64_t seed, bool identity_link) {
  if (mc_size < 10000) {
    throw std::invalid_argument("true_pce_oracle: mc_size must be >= 1e4");
  }
  const ModelParams& p = truth.params;
  if (period < 1 || period > static_cast<int>(p.eta1.size())) {
    throw std::invalid_argument("true_pce_oracle: period outside 1..T");
  }
  int o = -1;
  for (std::size_t k = 0; k < truth.outcome_periods.size(); ++k) {
    if (truth.outcome_periods[k] == period) o = static_cast<int>(k);
  }
  if (o < 0) throw std::invalid_argument("true_pce_oracle: period has no outcome model");
  const double rho = truth.rho;
  if (!(std::fabs(rho) < 1.0)) throw std::invalid_argument("true_pce_oracle: |rho| must be < 1");

  OracleModel om{p,
                 p.eta1[static_cast<std::size_t>(period - 1)],
                 p.eta2[static_cast<std::size_t>(o)],
                 p.mediator_var(),
                 p.cov_alpha12() + p.cov_phi12(),
                 0.0,
                 rho};
  om.var_u = (p.sigma_alpha2 * p.sigma_alpha2 + p.sigma_phi2 * p.sigma_phi2) -
             om.c * om.c / om.v;
  if (om.var_u < 0.0) om.var_u = 0.0;

  // Analytic mass of the stratum (difference of normal CDFs, inline).
  const double sd_d = std::sqrt(2.0 * (1.0 - rho) * om.v);
  const double p_hi =
      std::isinf(interval.hi) ? 1.0 : 0.5 * std::erfc(-(interval.hi - p.gamma1) / (sd_d * M_SQRT2));
  const double p_lo =
      std::isinf(interval.lo) ? 0.0 : 0.5 * std::erfc(-(interval.lo - p.gamma1) / (sd_d * M_SQRT2));
  const double mass = p_hi - p_lo;
  if (!(mass > 1e-6)) {
    throw DegenerateStratumError("true_pce_oracle: stratum probability " + format_double(mass) +
                                 " below 1e-6");
  }

  // Box-Muller pairs from the truth copula, filtered to the interval.
  RngStream rng = RngStream(seed).fork(0x6f7261ULL);
  const double sd_m = std::sqrt(om.v);
  const double wr = std::sqrt(1.0 - rho * rho);
  std::vector<std::pair<double, double>> kept;
  kept.reserve(static_cast<std::size_t>(mass * mc_size * 1.1) + 16);
  for (int i = 0; i < mc_size; ++i) {
    const double u1 = rng.uniform01(), u2 = rng.uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double g1 = r * std::cos(2.0 * M_PI * u2);
    const double g2 = r * std::sin(2.0 * M_PI * u2);
    const double m0 = om.mu_z(0) + sd_m * g1;
    const double m1 = om.mu_z(1) + sd_m * (rho * g1 + wr * g2);
    if (interval.contains(m1 - m0)) kept.emplace_back(m0, m1);
  }
  if (kept.empty()) {
    throw DegenerateStratumError("true_pce_oracle: no samples fell in the stratum");
  }

  // Dense delta grids per arm (bisection at each node, linear interpolation).
  auto build_table = [&](int z, double lambda) {
    LinearTable tab;
    const double mu = om.mu_z(z);
    tab.lo = mu - kOracleSpan * sd_m;
    tab.step = 2.0 * kOracleSpan * sd_m / (kOracleGrid - 1);
    tab.values.resize(kOracleGrid);
    for (int k = 0; k < kOracleGrid; ++k) {
      tab.values[static_cast<std::size_t>(k)] =
          om.solve_delta_bisect(tab.lo + k * tab.step, z, lambda, identity_link);
    }
    return tab;
  };
  const LinearTable d1 = build_table(1, truth.lambda1);
  const LinearTable d0 = build_table(0, truth.lambda0);

  double sum = 0.0, sum2 = 0.0;
  for (const auto& [m0, m1] : kept) {
    double term;
    if (identity_link) {
      term = (d1.at(m1) + truth.lambda1 * m0) - (d0.at(m0) + truth.lambda0 * m1);
    } else {
      term = expit(d1.at(m1) + truth.lambda1 * m0) - expit(d0.at(m0) + truth.lambda0 * m1);
    }
    sum += term;
    sum2 += term * term;
  }
  OracleResult res;
  res.n_kept = static_cast<int>(kept.size());
  res.strata_probability = mass;
  res.value = sum / res.n_kept;
  const double var = std::max(0.0, sum2 / res.n_kept - res.value * res.value);
  res.mc_se = std::sqrt(var / res.n_kept);
  return res;
}

}  // namespace swpce
