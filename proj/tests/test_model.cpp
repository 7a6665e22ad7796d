#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "swpce/model.hpp"
#include "swpce/rng.hpp"
#include "swpce/simulator.hpp"
#include "test_oracles.hpp"

using namespace swpce;

namespace {

ModelParams random_params(RngStream& rng, int T, int K) {
  ModelParams p;
  for (int t = 0; t < T; ++t) p.eta1.push_back(rng.uniform(-1.0, 1.0));
  for (int k = 0; k < K; ++k) p.eta2.push_back(rng.uniform(-1.0, 1.0));
  p.gamma1 = rng.uniform(-1.0, 1.0);
  p.beta1 = rng.uniform(-1.0, 1.0);
  p.beta2 = rng.uniform(-1.0, 1.0);
  p.beta3 = rng.uniform(-1.0, 1.0);
  p.beta4 = rng.uniform(-1.0, 1.0);
  p.sigma_eps = rng.uniform(0.5, 2.0);
  p.sigma_alpha1 = rng.uniform(0.1, 1.0);
  p.sigma_alpha2 = rng.uniform(0.1, 1.0);
  p.rho_alpha = rng.uniform(-0.9, 0.9);
  p.sigma_phi1 = rng.uniform(0.1, 1.0);
  p.sigma_phi2 = rng.uniform(0.1, 1.0);
  p.rho_phi = rng.uniform(-0.9, 0.9);
  return p;
}

TruthParams small_truth(int T) {
  TruthParams t = TruthParams{};
  t.params.eta1.assign(static_cast<std::size_t>(T), 0.0);
  for (int p = 2; p <= T; ++p) t.outcome_periods.push_back(p);
  t.params.eta2.assign(t.outcome_periods.size(), -0.3);
  for (int i = 0; i < T; ++i) t.params.eta1[static_cast<std::size_t>(i)] = 0.2 + 0.1 * i;
  t.params.gamma1 = 0.6;
  t.params.beta1 = 0.3;
  t.params.beta2 = 0.4;
  t.params.beta3 = 0.25;
  t.params.beta4 = 0.1;
  t.params.sigma_eps = 0.9;
  t.params.sigma_alpha1 = 0.3;
  t.params.sigma_alpha2 = 0.3;
  t.params.rho_alpha = 0.2;
  t.params.sigma_phi1 = 0.5;
  t.params.sigma_phi2 = 0.4;
  t.params.rho_phi = 0.3;
  return t;
}

}  // namespace

TEST_CASE("to/from_unconstrained: round-trip identity and fixed points") {
  ModelStructure s;
  s.n_periods = 4;
  s.outcome_periods = {2, 3, 4};
  RngStream rng(314);
  for (int rep = 0; rep < 20; ++rep) {
    const ModelParams p = random_params(rng, 4, 3);
    const ModelParams q = from_unconstrained(to_unconstrained(p, s), s);
    for (int t = 0; t < 4; ++t) {
      CHECK(q.eta1[static_cast<std::size_t>(t)] ==
            doctest::Approx(p.eta1[static_cast<std::size_t>(t)]).epsilon(1e-12));
    }
    CHECK(q.gamma1 == doctest::Approx(p.gamma1).epsilon(1e-12));
    CHECK(q.sigma_eps == doctest::Approx(p.sigma_eps).epsilon(1e-12));
    CHECK(q.rho_alpha == doctest::Approx(p.rho_alpha).epsilon(1e-12));
    CHECK(q.rho_phi == doctest::Approx(p.rho_phi).epsilon(1e-12));
    CHECK(q.sigma_phi2 == doctest::Approx(p.sigma_phi2).epsilon(1e-12));
  }
  ModelParams p = random_params(rng, 4, 3);
  p.sigma_eps = 1.0;
  p.rho_alpha = 0.0;
  const Eigen::VectorXd v = to_unconstrained(p, s);
  const auto names = param_names(s);
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (names[k] == "log_sigma_eps") CHECK(v[static_cast<Eigen::Index>(k)] == 0.0);
    if (names[k] == "atanh_rho_alpha") CHECK(v[static_cast<Eigen::Index>(k)] == 0.0);
  }
}

TEST_CASE("log_joint: single-row anchor values") {
  // One cluster, one individual, one period; zero latents.
  ModelStructure s;
  s.n_periods = 1;
  s.outcome_periods = {1};
  s.n_clusters = 1;
  s.n_individuals = 1;

  LaggedView view;
  LaggedRow row;
  row.cluster = 0;
  row.individual = 0;
  row.period = 1;
  row.z = 0;
  row.m = 0.0;  // residual 0 when eta1 = 0
  row.y = 1;
  view.rows.push_back(row);

  ModelParams p;
  p.eta1 = {0.0};
  p.eta2 = {0.0};
  p.sigma_eps = 1.0;
  p.sigma_alpha1 = p.sigma_alpha2 = p.sigma_phi1 = p.sigma_phi2 = 0.5;
  p.beta2 = 0.0;
  LatentEffects lat;
  lat.z_alpha = {0.0, 0.0};
  lat.z_phi = {0.0, 0.0};
  HyperPriors hp;

  const double got = log_joint(p, lat, view, s, hp);
  const double ref = oracle::naive_log_joint(p, lat, view, s, hp);
  CHECK(got == doctest::Approx(ref).epsilon(1e-12));

  // The Gaussian term alone is -log(2 pi)/2; the Bernoulli term log(1/2):
  // isolate them by differencing against an empty view.
  LaggedView empty;
  const double base = log_joint(p, lat, empty, s, hp);
  CHECK(got - base == doctest::Approx(-0.5 * std::log(2.0 * M_PI) + std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("log_joint: matches the naive direct-summation oracle on simulated data") {
  const TruthParams truth = small_truth(4);
  DesignSpec design;
  design.n_clusters = 6;
  design.n_periods = 4;
  design.cohort_size = 8;
  design.dropout_hazard = 0.1;
  const TrialDataset data = simulate_trial(design, truth, 99);
  const ModelStructure s = ModelStructure::infer(data);
  const LaggedView view = observed_rows(data, false);

  RngStream rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    const ModelParams p = random_params(rng, 4, 3);
    LatentEffects lat;
    for (int j = 0; j < 2 * s.n_clusters; ++j) lat.z_alpha.push_back(rng.normal());
    for (int i = 0; i < 2 * s.n_individuals; ++i) lat.z_phi.push_back(rng.normal());
    const double got = log_joint(p, lat, view, s, HyperPriors{});
    const double ref = oracle::naive_log_joint(p, lat, view, s, HyperPriors{});
    CHECK(std::fabs(got - ref) / std::fabs(ref) < 1e-9);
  }
}

TEST_CASE("log_joint: invariant to row permutation and cluster relabeling") {
  const TruthParams truth = small_truth(3);
  DesignSpec design;
  design.n_clusters = 4;
  design.n_periods = 3;
  design.cohort_size = 5;
  const TrialDataset data = simulate_trial(design, truth, 123);
  const ModelStructure s = ModelStructure::infer(data);
  LaggedView view = observed_rows(data, false);

  RngStream rng(6);
  const ModelParams p = random_params(rng, 3, 2);
  LatentEffects lat;
  for (int j = 0; j < 2 * s.n_clusters; ++j) lat.z_alpha.push_back(rng.normal());
  for (int i = 0; i < 2 * s.n_individuals; ++i) lat.z_phi.push_back(rng.normal());
  const double base = log_joint(p, lat, view, s, HyperPriors{});

  std::reverse(view.rows.begin(), view.rows.end());
  CHECK(log_joint(p, lat, view, s, HyperPriors{}) == doctest::Approx(base).epsilon(1e-12));

  // Swap the labels of clusters 0 and 1 everywhere, and swap their latents.
  LaggedView relabeled = view;
  for (auto& r : relabeled.rows) {
    if (r.cluster == 0) {
      r.cluster = 1;
    } else if (r.cluster == 1) {
      r.cluster = 0;
    }
  }
  LatentEffects lat2 = lat;
  std::swap(lat2.z_alpha[0], lat2.z_alpha[2]);
  std::swap(lat2.z_alpha[1], lat2.z_alpha[3]);
  CHECK(log_joint(p, lat2, relabeled, s, HyperPriors{}) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("log_joint_grad: matches central finite differences at 20 random points") {
  const TruthParams truth = small_truth(4);
  DesignSpec design;
  design.n_clusters = 6;
  design.n_periods = 4;
  design.cohort_size = 10;
  design.dropout_hazard = 0.05;
  const TrialDataset data = simulate_trial(design, truth, 2024);
  const ModelStructure s = ModelStructure::infer(data);
  const PosteriorTarget target(observed_rows(data, false), s, HyperPriors{});

  RngStream rng(77);
  const double h = 1e-5;
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd v(target.dim());
    for (int k = 0; k < target.dim(); ++k) v[k] = 0.5 * rng.normal();
    Eigen::VectorXd grad;
    target.log_joint_grad(v, grad);
    for (int k = 0; k < target.dim(); ++k) {
      Eigen::VectorXd vp = v, vm = v;
      vp[k] += h;
      vm[k] -= h;
      const double fd = (target.log_joint(vp) - target.log_joint(vm)) / (2.0 * h);
      const double rel = std::fabs(grad[k] - fd) / std::max({1.0, std::fabs(grad[k]), std::fabs(fd)});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("log_joint_grad: prior mode with empty data gives -latents for latent coordinates") {
  ModelStructure s;
  s.n_periods = 2;
  s.outcome_periods = {2};
  s.n_clusters = 2;
  s.n_individuals = 3;
  const PosteriorTarget target(LaggedView{}, s, HyperPriors{});
  RngStream rng(8);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(target.dim());
  for (int k = target.n_param(); k < target.dim(); ++k) v[k] = rng.normal();
  Eigen::VectorXd grad;
  target.log_joint_grad(v, grad);
  for (int k = target.n_param(); k < target.dim(); ++k) {
    CHECK(grad[k] == doctest::Approx(-v[k]).epsilon(1e-12));
  }
}

TEST_CASE("log_joint_grad: duplicating every row doubles the likelihood gradient") {
  const TruthParams truth = small_truth(3);
  DesignSpec design;
  design.n_clusters = 3;
  design.n_periods = 3;
  design.cohort_size = 4;
  const TrialDataset data = simulate_trial(design, truth, 31);
  const ModelStructure s = ModelStructure::infer(data);
  LaggedView view = observed_rows(data, false);
  LaggedView doubled = view;
  doubled.rows.insert(doubled.rows.end(), view.rows.begin(), view.rows.end());

  const PosteriorTarget t1(view, s, HyperPriors{});
  const PosteriorTarget t2(doubled, s, HyperPriors{});
  const PosteriorTarget t0(LaggedView{}, s, HyperPriors{});

  RngStream rng(9);
  Eigen::VectorXd v(t1.dim());
  for (int k = 0; k < t1.dim(); ++k) v[k] = 0.3 * rng.normal();
  Eigen::VectorXd g1, g2, g0;
  t1.log_joint_grad(v, g1);
  t2.log_joint_grad(v, g2);
  t0.log_joint_grad(v, g0);
  const Eigen::VectorXd lik1 = g1 - g0, lik2 = g2 - g0;
  for (int k = 0; k < t1.dim(); ++k) {
    CHECK(lik2[k] == doctest::Approx(2.0 * lik1[k]).epsilon(1e-9));
  }
}

TEST_CASE("from_unconstrained always yields positive-definite covariance components") {
  ModelStructure s;
  s.n_periods = 3;
  s.outcome_periods = {2, 3};
  RngStream rng(10);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd v(param_dim(s));
    for (int k = 0; k < v.size(); ++k) v[k] = 3.0 * rng.normal();
    const ModelParams p = from_unconstrained(v, s);
    CHECK(p.sigma_eps > 0.0);
    CHECK(p.sigma_alpha1 > 0.0);
    CHECK(p.sigma_phi2 > 0.0);
    CHECK(std::fabs(p.rho_alpha) < 1.0);
    CHECK(std::fabs(p.rho_phi) < 1.0);
    // 2x2 determinant positive.
    CHECK(p.sigma_alpha1 * p.sigma_alpha1 * p.sigma_alpha2 * p.sigma_alpha2 -
              p.cov_alpha12() * p.cov_alpha12() >
          0.0);
  }
}
