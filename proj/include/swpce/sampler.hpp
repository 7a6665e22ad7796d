#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "swpce/model.hpp"

// Posterior sampling by Hamiltonian Monte Carlo: fixed-length leapfrog with a
// jittered step count, dual-averaging step-size adaptation, and a diagonal
// mass matrix estimated from warmup. Chains run on independent RNG streams and
// the result is deterministic given the seed.

namespace swpce {

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int samples = 1000;
  double target_accept = 0.8;
  int max_leapfrog = 32;  // jittered uniformly over [1, max_leapfrog]
  std::uint64_t seed = 0;
  bool store_latents = false;
};

struct PosteriorDraws {
  Eigen::MatrixXd draws;           // (chains * samples) x n_kept, post-warmup only
  std::vector<int> chain;          // 1-based chain label per row
  std::vector<std::string> names;  // kept coordinate names
  std::vector<double> accept_rate;  // mean acceptance probability per chain
  std::vector<double> step_size;    // adapted step size per chain
  int divergences = 0;
  int n_chains = 0;
  int n_samples_per_chain = 0;

  int n_draws() const { return static_cast<int>(draws.rows()); }
  int column(const std::string& name) const;  // -1 when absent
  double posterior_mean(const std::string& name) const;
};

struct Diagnostics {
  std::vector<std::string> names;
  std::vector<double> rhat;  // split-Rhat; NaN when unavailable (single chain)
  std::vector<double> ess;   // rank-normalized bulk ESS; NaN for degenerate chains
  int divergences = 0;
  std::vector<std::string> warnings;
};

using TargetFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

PosteriorDraws run_hmc(const TargetFn& target, int dim, const SamplerConfig& cfg,
                       std::vector<std::string> names = {}, int n_kept = -1);

Diagnostics diagnostics(const PosteriorDraws& draws);

struct FitResult {
  PosteriorDraws draws;
  Diagnostics diag;
  ModelStructure structure;
};

/// Step 1 of the pipeline: posterior sampling of the observed-data model.
FitResult fit(const TrialDataset& data, const HyperPriors& hp, const SamplerConfig& cfg,
              ModelStructure structure = {});

/// Draws file round-trip (CSV `draw,chain,<coordinate names...>`).
void write_draws_csv(const PosteriorDraws& draws, const std::string& path);
PosteriorDraws read_draws_csv(const std::string& path);

}  // namespace swpce
