#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "swpce/model.hpp"
#include "swpce/pce.hpp"
#include "swpce/sampler.hpp"
#include "swpce/simulator.hpp"

#include <nlohmann/json_fwd.hpp>

// Run configuration: one structured JSON file with per-section defaults, fully
// overridable from CLI flags. The effective config is echoed into every output
// manifest for reproducibility.

namespace swpce {

struct PceConfig {
  std::vector<int> periods;          // empty = all outcome periods
  std::vector<Interval> intervals;   // empty = default partition with `delta`
  double delta = 0.5;
  int mc_size = 2000;
  int quadrature_order = 20;
  Link link = Link::logit;
  bool exact_delta = false;
  std::optional<std::vector<double>> rho_grid_override;
  std::optional<std::pair<double, double>> fixed_lambda;  // bypass triangular rule
};

struct CalibrateConfig {
  bool per_period = false;
  bool lambda_per_draw = false;
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::string workspace = "workspace";
  std::string data_path;  // empty = <workspace>/data.csv
  int threads = 0;        // 0 = hardware concurrency

  DesignSpec design;
  TruthParams truth;
  HyperPriors priors;
  SamplerConfig sampler;
  std::vector<int> outcome_periods;  // model structure; empty = 2..T
  int mediator_lag = 0;
  CalibrateConfig calibrate;
  PceConfig pce;

  std::string resolved_data_path() const;

  /// Effective config as JSON (used for manifests; deterministic key order).
  nlohmann::ordered_json echo() const;

  static RunConfig defaults();
  static RunConfig from_json_file(const std::string& path);
};

/// Truth regime used by default configs: staircase 8-cluster design with a
/// positive mediator effect and a positive treatment-by-mediator interaction.
TruthParams default_truth(int n_periods);

std::uint64_t require_seed(const RunConfig& cfg);

/// FNV-1a content hash of a file, hex-encoded (manifest provenance).
std::string file_hash_hex(const std::string& path);

}  // namespace swpce
