#include "swpce/pce.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "swpce/special.hpp"

namespace swpce {

std::vector<Interval> PceQuery::default_partition(double delta) {
  return {Interval::dissociative(delta), Interval::decrease(delta), Interval::increase(delta)};
}

JointMediatorLaw joint_mediator_law(const ModelParams& p, const ModelStructure& s, int period,
                                    double rho) {
  if (period < 1 || period > s.n_periods) {
    throw std::invalid_argument("joint_mediator_law: period outside 1..T");
  }
  if (!(std::fabs(rho) < 1.0)) {
    throw std::invalid_argument("joint_mediator_law: |rho| must be < 1 (degenerate copula)");
  }
  JointMediatorLaw law;
  law.mu0 = p.eta1[static_cast<std::size_t>(period - 1)];
  law.mu1 = law.mu0 + p.gamma1;
  law.var = p.mediator_var();
  law.rho = rho;
  if (!(law.var > 0.0)) throw std::invalid_argument("joint_mediator_law: mediator variance <= 0");
  return law;
}

double strata_probability(const JointMediatorLaw& law, const Interval& interval) {
  const double s = std::sqrt(2.0 * (1.0 - law.rho) * law.var);
  const double gamma1 = law.mu1 - law.mu0;
  const double hi = std::isinf(interval.hi) ? 1.0 : std_normal_cdf((interval.hi - gamma1) / s);
  const double lo = std::isinf(interval.lo) ? 0.0 : std_normal_cdf((interval.lo - gamma1) / s);
  return std::max(0.0, hi - lo);
}

namespace {

struct OutcomeMeanCtx {
  double mean_slope;  // c / v
  double var_u;
  double lin_base;    // eta_2t + beta_1 z
  double m_coef;      // beta_2 + beta_3 z
  double mu_z;
};

OutcomeMeanCtx outcome_mean_ctx(const ModelParams& p, const ModelStructure& s, int period,
                                int z) {
  const int o = s.outcome_index(period);
  if (o < 0) {
    throw std::invalid_argument("conditional_outcome_mean: period " + std::to_string(period) +
                                " has no outcome model");
  }
  OutcomeMeanCtx ctx;
  const double v = p.mediator_var();
  const double c = p.cov_alpha12() + p.cov_phi12();
  ctx.mean_slope = c / v;
  const double var_u =
      (p.sigma_alpha2 * p.sigma_alpha2 + p.sigma_phi2 * p.sigma_phi2) - c * c / v;
  if (var_u < -1e-12) {
    throw Error("conditional_outcome_mean: conditional variance " + format_double(var_u) +
                " below -1e-12; covariance components inconsistent");
  }
  ctx.var_u = std::max(0.0, var_u);
  ctx.lin_base = p.eta2[static_cast<std::size_t>(o)] + p.beta1 * z;
  ctx.m_coef = p.beta2 + p.beta3 * z;
  ctx.mu_z = p.eta1[static_cast<std::size_t>(period - 1)] + p.gamma1 * z;
  return ctx;
}

double outcome_mean_at(const OutcomeMeanCtx& ctx, double m, const GaussHermiteRule& rule) {
  const double mean_u = ctx.mean_slope * (m - ctx.mu_z);
  const double lin = ctx.lin_base + ctx.m_coef * m;
  return ghq_expectation(rule, mean_u, ctx.var_u, [&](double u) { return expit(lin + u); });
}

}  // namespace

double conditional_outcome_mean(const ModelParams& p, const ModelStructure& s, int period,
                                double m, int z, const GaussHermiteRule& rule) {
  return outcome_mean_at(outcome_mean_ctx(p, s, period, z), m, rule);
}

namespace {

struct DeltaSolver {
  OutcomeMeanCtx ctx;
  double mu_other;       // mean of M(1-z)
  double mu_z;           // mean of M(z)
  double rho;
  double cond_var;       // (1 - rho^2) v
  double lambda;
  Link link;
  const GaussHermiteRule* rule;

  double solve(double m, bool force_newton) const {
    const double ey = outcome_mean_at(ctx, m, *rule);
    const double mstar_mean = mu_other + rho * (m - mu_z);
    if (link == Link::identity && !force_newton) {
      return ey - lambda * mstar_mean;
    }
    if (link == Link::identity) {
      // Newton on the identity-link convolution (derivative is exactly 1).
      auto f = [&](double d) {
        return ghq_expectation(*rule, mstar_mean, cond_var,
                               [&](double ms) { return d + lambda * ms; }) -
               ey;
      };
      return newton_solve(f, [](double) { return 1.0; }, ey - lambda * mstar_mean);
    }
    auto f = [&](double d) {
      return ghq_expectation(*rule, mstar_mean, cond_var,
                             [&](double ms) { return expit(d + lambda * ms); }) -
             ey;
    };
    auto df = [&](double d) {
      return ghq_expectation(*rule, mstar_mean, cond_var,
                             [&](double ms) { return expit_deriv(d + lambda * ms); });
    };
    return newton_solve(f, df, logit(ey) - lambda * mstar_mean);
  }
};

DeltaSolver make_delta_solver(const ModelParams& p, const ModelStructure& s, int period, int z,
                              double lambda_z, const JointMediatorLaw& law, Link link,
                              const GaussHermiteRule& rule) {
  DeltaSolver ds;
  ds.ctx = outcome_mean_ctx(p, s, period, z);
  ds.mu_z = z == 1 ? law.mu1 : law.mu0;
  ds.mu_other = z == 1 ? law.mu0 : law.mu1;
  ds.rho = law.rho;
  ds.cond_var = (1.0 - law.rho * law.rho) * law.var;
  ds.lambda = lambda_z;
  ds.link = link;
  ds.rule = &rule;
  return ds;
}

// Monotone cubic (Fritsch-Carlson) interpolation of delta on a uniform grid.
class DeltaTable {
 public:
  DeltaTable(const DeltaSolver& solver, double lo, double hi, int n) : lo_(lo) {
    if (n < 2) n = 2;
    if (!(hi > lo)) hi = lo + 1e-8;
    step_ = (hi - lo) / (n - 1);
    y_.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      y_[static_cast<std::size_t>(k)] = solver.solve(lo + k * step_, false);
    }
    slopes_.assign(y_.size(), 0.0);
    const std::size_t m = y_.size();
    std::vector<double> d(m - 1);
    for (std::size_t k = 0; k + 1 < m; ++k) d[k] = (y_[k + 1] - y_[k]) / step_;
    slopes_[0] = d[0];
    slopes_[m - 1] = d[m - 2];
    for (std::size_t k = 1; k + 1 < m; ++k) {
      if (d[k - 1] * d[k] <= 0.0) {
        slopes_[k] = 0.0;
      } else {
        slopes_[k] = 2.0 * d[k - 1] * d[k] / (d[k - 1] + d[k]);  // harmonic mean
      }
    }
  }

  double operator()(double x) const {
    const int n = static_cast<int>(y_.size());
    double pos = (x - lo_) / step_;
    if (pos <= 0.0) pos = 0.0;
    if (pos >= n - 1.0) pos = n - 1.0 - 1e-12;
    const int k = std::min(n - 2, static_cast<int>(pos));
    const double t = pos - k;
    const double h00 = (1 + 2 * t) * (1 - t) * (1 - t);
    const double h10 = t * (1 - t) * (1 - t);
    const double h01 = t * t * (3 - 2 * t);
    const double h11 = t * t * (t - 1);
    return h00 * y_[static_cast<std::size_t>(k)] + h10 * step_ * slopes_[static_cast<std::size_t>(k)] +
           h01 * y_[static_cast<std::size_t>(k + 1)] +
           h11 * step_ * slopes_[static_cast<std::size_t>(k + 1)];
  }

 private:
  double lo_, step_;
  std::vector<double> y_;
  std::vector<double> slopes_;
};

}  // namespace

double solve_delta(const ModelParams& p, const ModelStructure& s, int period, double m, int z,
                   double lambda_z, const JointMediatorLaw& law, Link link,
                   const GaussHermiteRule& rule, bool force_newton) {
  return make_delta_solver(p, s, period, z, lambda_z, law, link, rule).solve(m, force_newton);
}

PceDrawResult pce_for_draw(const ModelParams& p, const ModelStructure& s, const PceQuery& query,
                           double lambda0, double lambda1, const Interval& interval,
                           RngStream& rng) {
  const JointMediatorLaw law = joint_mediator_law(p, s, query.period, query.rho);
  const double denom = strata_probability(law, interval);
  if (!(denom > 1e-8)) {
    throw DegenerateStratumError("pce_for_draw: stratum " + interval.label() +
                                 " has probability " + format_double(denom));
  }
  if (query.mc_size < 100) throw std::invalid_argument("pce_for_draw: mc_size must be >= 100");
  const GaussHermiteRule rule = gauss_hermite_rule(query.quadrature_order);

  const auto pairs =
      sample_strata_pair(law.mu0, law.mu1, law.var, law.rho, interval, query.mc_size, rng);

  const DeltaSolver solver1 = make_delta_solver(p, s, query.period, 1, lambda1, law, query.link, rule);
  const DeltaSolver solver0 = make_delta_solver(p, s, query.period, 0, lambda0, law, query.link, rule);

  double min_m0 = pairs[0].first, max_m0 = pairs[0].first;
  double min_m1 = pairs[0].second, max_m1 = pairs[0].second;
  for (const auto& [m0, m1] : pairs) {
    min_m0 = std::min(min_m0, m0);
    max_m0 = std::max(max_m0, m0);
    min_m1 = std::min(min_m1, m1);
    max_m1 = std::max(max_m1, m1);
  }

  std::optional<DeltaTable> table0, table1;
  if (!query.exact_delta) {
    table1.emplace(solver1, min_m1, max_m1, query.delta_grid_size);
    table0.emplace(solver0, min_m0, max_m0, query.delta_grid_size);
  }
  auto delta1 = [&](double m) { return table1 ? (*table1)(m) : solver1.solve(m, false); };
  auto delta0 = [&](double m) { return table0 ? (*table0)(m) : solver0.solve(m, false); };

  double sum = 0.0, sum2 = 0.0;
  for (const auto& [m0, m1] : pairs) {
    double term;
    if (query.link == Link::identity) {
      term = (delta1(m1) + lambda1 * m0) - (delta0(m0) + lambda0 * m1);
    } else {
      term = expit(delta1(m1) + lambda1 * m0) - expit(delta0(m0) + lambda0 * m1);
    }
    sum += term;
    sum2 += term * term;
  }
  PceDrawResult res;
  const double n = static_cast<double>(pairs.size());
  res.pce = sum / n;
  res.denominator = denom;
  res.numerator = res.pce * denom;
  res.mc_se = std::sqrt(std::max(0.0, sum2 / n - res.pce * res.pce) / n);
  return res;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const std::size_t k = static_cast<std::size_t>(h);
  if (k + 1 >= values.size()) return values.back();
  const double w = h - static_cast<double>(k);
  return values[k] * (1.0 - w) + values[k + 1] * w;
}

PceEstimate pce_posterior(const PosteriorDraws& draws, const ModelStructure& s,
                          const SensitivityConfig& sens, const PceQuery& query_base,
                          const std::vector<int>& periods, int threads) {
  if (draws.n_draws() == 0) throw std::invalid_argument("pce_posterior: no draws");
  const std::vector<Interval> intervals =
      query_base.intervals.empty() ? PceQuery::default_partition() : query_base.intervals;
  const int S = draws.n_draws();

  struct Cell {
    int period;
    Interval interval;
    double rho;
  };
  std::vector<Cell> cells;
  for (double rho : sens.rho_grid) {
    for (const auto& iv : intervals) {
      for (int t : periods) cells.push_back({t, iv, rho});
    }
  }

  const int beta2_col = draws.column("beta2");
  const int beta3_col = draws.column("beta3");
  if (sens.per_draw_upper && (beta2_col < 0 || beta3_col < 0)) {
    throw Error("pce_posterior: per-draw lambda bounds need beta2/beta3 draws");
  }

  PceEstimate est;
  est.samples.resize(cells.size() * static_cast<std::size_t>(S));

  // Independent tasks: one per (cell, draw), each with a stream keyed by
  // (seed, draw, cell) so results do not depend on scheduling.
  const RngStream root(query_base.seed);
  std::atomic<std::size_t> next{0};
  const std::size_t n_tasks = cells.size() * static_cast<std::size_t>(S);
  auto worker = [&]() {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= n_tasks) return;
      const std::size_t ci = task / static_cast<std::size_t>(S);
      const int sdraw = static_cast<int>(task % static_cast<std::size_t>(S));
      const Cell& cell = cells[ci];
      RngStream rng = root.fork(0x706365ULL, static_cast<std::uint64_t>(sdraw),
                                static_cast<std::uint64_t>(ci));
      PceDrawRecord& rec = est.samples[task];
      rec.period = cell.period;
      rec.interval_label = cell.interval.label();
      rec.rho = cell.rho;
      rec.draw = sdraw;
      SensitivityBounds b = sens.bounds;
      if (sens.per_draw_upper) {
        b.lambda0_upper = draws.draws(sdraw, beta2_col);
        b.lambda1_upper = draws.draws(sdraw, beta2_col) + draws.draws(sdraw, beta3_col);
      }
      rec.lambda0 = sample_lambda_one(b.lambda0_lower, b.lambda0_upper, rng);
      rec.lambda1 = sample_lambda_one(b.lambda1_lower, b.lambda1_upper, rng);
      try {
        const ModelParams p = from_unconstrained(draws.draws.row(sdraw).transpose(), s);
        PceQuery q = query_base;
        q.period = cell.period;
        q.rho = cell.rho;
        const PceDrawResult r = pce_for_draw(p, s, q, rec.lambda0, rec.lambda1, cell.interval, rng);
        rec.numerator = r.numerator;
        rec.denominator = r.denominator;
        rec.pce = r.pce;
        rec.ok = true;
      } catch (const Error&) {
        rec.ok = false;
      }
    }
  };
  int n_threads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  if (n_threads < 1) n_threads = 1;
  if (static_cast<std::size_t>(n_threads) > n_tasks) n_threads = static_cast<int>(n_tasks);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    PceCellSummary cs;
    cs.period = cells[ci].period;
    cs.interval = cells[ci].interval;
    cs.rho = cells[ci].rho;
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(S));
    for (int sdraw = 0; sdraw < S; ++sdraw) {
      const auto& rec = est.samples[ci * static_cast<std::size_t>(S) + static_cast<std::size_t>(sdraw)];
      if (rec.ok) {
        vals.push_back(rec.pce);
      } else {
        ++cs.n_failed;
        ++est.total_failed;
      }
    }
    cs.n_ok = static_cast<int>(vals.size());
    if (!vals.empty()) {
      double acc = 0.0;
      for (double v : vals) acc += v;
      cs.mean = acc / static_cast<double>(vals.size());
      cs.q025 = quantile(vals, 0.025);
      cs.q975 = quantile(vals, 0.975);
    }
    est.cells.push_back(std::move(cs));
  }
  if (est.total_failed > 0.05 * static_cast<double>(n_tasks)) {
    throw Error("pce_posterior: " + std::to_string(est.total_failed) + " of " +
                std::to_string(n_tasks) + " draw-level computations failed (> 5%)");
  }
  return est;
}

}  // namespace swpce
