#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "swpce/simulator.hpp"
#include "swpce/special.hpp"
#include "test_oracles.hpp"

using namespace swpce;

namespace {

TruthParams base_truth(int T = 5) {
  TruthParams t;
  t.params.eta1 = {0.3, 0.5, 0.6, 0.7, 0.8};
  t.params.eta1.resize(static_cast<std::size_t>(T));
  for (int p = 2; p <= T; ++p) t.outcome_periods.push_back(p);
  t.params.eta2.assign(t.outcome_periods.size(), -0.5);
  t.params.gamma1 = 0.8;
  t.params.beta1 = 0.3;
  t.params.beta2 = 0.5;
  t.params.beta3 = 0.35;
  t.params.beta4 = 0.0;
  t.params.sigma_eps = 1.0;
  t.params.sigma_alpha1 = 0.35;
  t.params.sigma_alpha2 = 0.35;
  t.params.rho_alpha = 0.2;
  t.params.sigma_phi1 = 0.6;
  t.params.sigma_phi2 = 0.5;
  t.params.rho_phi = 0.3;
  t.rho = 0.7;
  t.lambda0 = 0.15;
  t.lambda1 = 0.1;
  return t;
}

}  // namespace

TEST_CASE("staircase: 8 clusters over 5 periods start in pairs at 2,3,4,5") {
  const auto s = DesignSpec::staircase(8, 5);
  CHECK(s == std::vector<int>{2, 2, 3, 3, 4, 4, 5, 5});
}

TEST_CASE("simulate_trial: degenerate noise gives M = eta1 + gamma1 Z exactly") {
  TruthParams t = base_truth(3);
  t.params.eta1 = {0.1, 0.2, 0.3};
  t.outcome_periods = {2, 3};
  t.params.eta2 = {-0.5, -0.5};
  t.params.sigma_eps = 0.0;
  t.params.sigma_alpha1 = t.params.sigma_alpha2 = 0.0;
  t.params.sigma_phi1 = t.params.sigma_phi2 = 0.0;
  DesignSpec d;
  d.n_clusters = 4;
  d.n_periods = 3;
  d.cohort_size = 3;
  const TrialDataset data = simulate_trial(d, t, 1);
  for (const auto& r : data.records()) {
    const double expected =
        t.params.eta1[static_cast<std::size_t>(r.period - 1)] + t.params.gamma1 * r.treatment;
    CHECK(*r.mediator == expected);
  }
}

TEST_CASE("simulate_trial: fixed seed gives a bit-identical dataset") {
  DesignSpec d;
  d.n_clusters = 6;
  d.n_periods = 5;
  d.cohort_size = 10;
  d.dropout_hazard = 0.1;
  const TrialDataset a = simulate_trial(d, base_truth(), 321);
  const TrialDataset b = simulate_trial(d, base_truth(), 321);
  CHECK(to_csv(a) == to_csv(b));
  const TrialDataset c = simulate_trial(d, base_truth(), 322);
  CHECK(to_csv(a) != to_csv(c));
}

TEST_CASE("simulate_trial: output always passes validate") {
  RngStream seeds(1000);
  for (int rep = 0; rep < 5; ++rep) {
    DesignSpec d;
    d.n_clusters = 5 + rep;
    d.n_periods = 4;
    d.cohort_size = 6;
    d.dropout_hazard = 0.15;
    TruthParams t = base_truth(4);
    t.params.eta1.resize(4);
    t.outcome_periods = {2, 3, 4};
    t.params.eta2.assign(3, -0.4);
    const TrialDataset data = simulate_trial(d, t, seeds.next_u64());
    CHECK(validate(data).ok());
  }
}

TEST_CASE("simulate_trial: control-arm mean of M at large n is eta1 within 3 SE") {
  DesignSpec d;
  d.n_clusters = 500;
  d.n_periods = 2;
  d.cohort_size = 50;
  TruthParams t = base_truth(2);
  t.params.eta1 = {0.3, 0.5};
  t.outcome_periods = {2};
  t.params.eta2 = {-0.5};
  // Under control at t = 1 for every cluster.
  const TrialDataset data = simulate_trial(d, t, 2025);
  double sum = 0.0;
  long n = 0;
  for (const auto& r : data.records()) {
    if (r.period == 1) {
      sum += *r.mediator;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  // Cluster effects are shared: SE ~ sqrt(sa1^2/J + (sp1^2+se^2)/n_total).
  const double J = 500.0, N = J * 50.0;
  const auto& p = t.params;
  const double se = std::sqrt(p.sigma_alpha1 * p.sigma_alpha1 / J +
                              (p.sigma_phi1 * p.sigma_phi1 + p.sigma_eps * p.sigma_eps) / N);
  CHECK(std::fabs(mean - 0.3) < 3.0 * se);
}

TEST_CASE("simulate_trial: gamma1 = 0 makes M exchangeable across arms within period") {
  DesignSpec d;
  d.n_clusters = 40;
  d.n_periods = 2;
  d.cohort_size = 250;
  TruthParams t = base_truth(2);
  t.params.eta1 = {0.3, 0.5};
  t.outcome_periods = {2};
  t.params.eta2 = {-0.5};
  t.params.gamma1 = 0.0;
  t.params.sigma_alpha1 = 0.05;  // keep clustering mild so KS applies loosely
  const TrialDataset data = simulate_trial(d, t, 88);
  std::vector<double> treated, control;
  for (const auto& r : data.records()) {
    if (r.period != 2) continue;
    (r.treatment == 1 ? treated : control).push_back(*r.mediator);
  }
  REQUIRE(treated.size() + control.size() == 10000);
  const double ks = oracle::ks_two_sample(treated, control);
  const double n_eff = static_cast<double>(treated.size()) * control.size() /
                       (treated.size() + control.size());
  CHECK(ks < 1.63 / std::sqrt(n_eff));  // 99% null quantile
}

TEST_CASE("apply_dropout: hazard 0 is the identity") {
  DesignSpec d;
  d.n_clusters = 4;
  d.n_periods = 4;
  d.cohort_size = 5;
  TruthParams t = base_truth(4);
  t.params.eta1.resize(4);
  t.outcome_periods = {2, 3, 4};
  t.params.eta2.assign(3, -0.4);
  const TrialDataset data = simulate_trial(d, t, 5);
  const TrialDataset same = apply_dropout(data, 0.0, 6);
  CHECK(to_csv(data) == to_csv(same));
}

TEST_CASE("apply_dropout: hazard 0.99 leaves almost everyone observed only at t=1") {
  DesignSpec d;
  d.n_clusters = 10;
  d.n_periods = 5;
  d.cohort_size = 20;
  const TrialDataset data = simulate_trial(d, base_truth(), 7);
  const TrialDataset dropped = apply_dropout(data, 0.99, 8);
  CHECK(validate(dropped).ok());
  int observed_after_t1 = 0, total_after_t1 = 0;
  for (const auto& r : dropped.records()) {
    if (r.period >= 2) {
      ++total_after_t1;
      if (r.observed()) ++observed_after_t1;
    }
  }
  CHECK(observed_after_t1 < 0.03 * total_after_t1);
}

TEST_CASE("apply_dropout: per-period dropout fraction matches the hazard within 3 SE") {
  DesignSpec d;
  d.n_clusters = 10;
  d.n_periods = 5;
  d.cohort_size = 1000;  // 10^4 individuals
  const double hazard = 0.2;
  const TrialDataset data = simulate_trial(d, base_truth(), 9);
  const TrialDataset dropped = apply_dropout(data, hazard, 10);
  CHECK(validate(dropped).ok());

  // At-risk individuals per period transition.
  std::map<std::pair<std::string, std::string>, int> last_observed;
  for (const auto& r : dropped.records()) {
    auto key = std::make_pair(r.cluster_id, r.individual_id);
    if (r.observed()) {
      last_observed[key] = std::max(last_observed[key], r.period);
    }
  }
  for (int t = 2; t <= 5; ++t) {
    int at_risk = 0, dropped_now = 0;
    for (const auto& [key, last] : last_observed) {
      if (last >= t - 1) {
        ++at_risk;
        if (last == t - 1) ++dropped_now;
      }
    }
    const double frac = static_cast<double>(dropped_now) / at_risk;
    const double se = std::sqrt(hazard * (1.0 - hazard) / at_risk);
    CHECK(std::fabs(frac - hazard) < 3.0 * se);
  }
}

TEST_CASE("apply_dropout: MAR dependence on the last observed mediator shifts hazard") {
  DesignSpec d;
  d.n_clusters = 8;
  d.n_periods = 3;
  d.cohort_size = 800;
  TruthParams t = base_truth(3);
  t.params.eta1 = {0.0, 0.0, 0.0};
  t.outcome_periods = {2, 3};
  t.params.eta2.assign(2, -0.4);
  const TrialDataset data = simulate_trial(d, t, 11);
  const TrialDataset dropped = apply_dropout(data, 0.25, 12, /*m_coef=*/1.5);
  CHECK(validate(dropped).ok());
  // Individuals with above-average baseline M should drop more often at t=2.
  int hi_n = 0, hi_drop = 0, lo_n = 0, lo_drop = 0;
  std::map<std::pair<std::string, std::string>, double> m1;
  std::map<std::pair<std::string, std::string>, bool> gone_at_2;
  for (const auto& r : dropped.records()) {
    auto key = std::make_pair(r.cluster_id, r.individual_id);
    if (r.period == 1 && r.mediator) m1[key] = *r.mediator;
    if (r.period == 2) gone_at_2[key] = !r.observed();
  }
  for (const auto& [key, m] : m1) {
    if (m > 0.0) {
      ++hi_n;
      hi_drop += gone_at_2[key] ? 1 : 0;
    } else {
      ++lo_n;
      lo_drop += gone_at_2[key] ? 1 : 0;
    }
  }
  CHECK(static_cast<double>(hi_drop) / hi_n > static_cast<double>(lo_drop) / lo_n + 0.1);
}

TEST_CASE("true_pce_oracle: null effect when treatment is absent from the outcome model") {
  TruthParams t = base_truth();
  t.params.beta1 = 0.0;
  t.params.beta3 = 0.0;
  t.params.gamma1 = 0.0;  // strata symmetric across arms
  t.lambda0 = t.lambda1 = 0.0;
  const OracleResult r = true_pce_oracle(t, 3, Interval::dissociative(0.5), 100000, 13);
  CHECK(std::fabs(r.value) < 3.0 * r.mc_se + 1e-12);
}

TEST_CASE("true_pce_oracle: full interval with lambdas 0 equals the marginal-mean difference") {
  TruthParams t = base_truth();
  t.lambda0 = t.lambda1 = 0.0;
  const int period = 3;
  const OracleResult r = true_pce_oracle(t, period, Interval::full(), 200000, 14);

  // Independent reduction: E[Ey(M1, 1)] - E[Ey(M0, 0)], each by nested
  // fine-grid integration over the marginal law of M under that arm.
  const auto& p = t.params;
  const double v = p.mediator_var();
  const double c = p.cov_alpha12() + p.cov_phi12();
  const double var_u = p.sigma_alpha2 * p.sigma_alpha2 + p.sigma_phi2 * p.sigma_phi2 - c * c / v;
  auto arm_mean = [&](int z) {
    const double mu = p.eta1[period - 1] + p.gamma1 * z;
    return oracle::fine_grid_normal_expectation(mu, v, [&](double m) {
      const double mean_u = c / v * (m - mu);
      const double lin = p.eta2[1] + p.beta1 * z + p.beta2 * m + p.beta3 * m * z;
      return oracle::fine_grid_normal_expectation(
          mean_u, var_u, [&](double u) { return oracle::plain_expit(lin + u); }, 1e-8);
    }, 1e-8);
  };
  const double reference = arm_mean(1) - arm_mean(0);
  CHECK(std::fabs(r.value - reference) < 3.0 * r.mc_se);
}

TEST_CASE("true_pce_oracle: self-consistent between mc sizes and seed-invariant") {
  const TruthParams t = base_truth();
  const Interval iv = Interval::increase(0.5);
  const OracleResult small = true_pce_oracle(t, 3, iv, 10000, 15);
  const OracleResult big = true_pce_oracle(t, 3, iv, 1000000, 16);
  CHECK(std::fabs(small.value - big.value) <
        3.0 * std::sqrt(small.mc_se * small.mc_se + big.mc_se * big.mc_se));
  const OracleResult other_seed = true_pce_oracle(t, 3, iv, 10000, 99);
  CHECK(std::fabs(small.value - other_seed.value) <
        3.0 * std::sqrt(small.mc_se * small.mc_se + other_seed.mc_se * other_seed.mc_se));
}

TEST_CASE("true_pce_oracle: degenerate stratum and bad inputs raise") {
  const TruthParams t = base_truth();
  CHECK_THROWS_AS(true_pce_oracle(t, 3, Interval{40.0, 41.0}, 10000, 17),
                  DegenerateStratumError);
  CHECK_THROWS_AS(true_pce_oracle(t, 3, Interval::full(), 100, 18), std::invalid_argument);
  CHECK_THROWS_AS(true_pce_oracle(t, 1, Interval::full(), 10000, 19), std::invalid_argument);
}

TEST_CASE("simulate_trial: non-PSD covariance parameters raise") {
  TruthParams t = base_truth();
  t.params.sigma_eps = -1.0;
  DesignSpec d;
  CHECK_THROWS_AS(simulate_trial(d, t, 1), std::invalid_argument);
  TruthParams t2 = base_truth();
  t2.params.rho_alpha = 1.5;
  CHECK_THROWS_AS(simulate_trial(d, t2, 1), std::invalid_argument);
}
