#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "swpce/errors.hpp"

// Long-format stepped-wedge dataset: closed cohorts of individuals nested in
// clusters, observed over periods 1..T, with monotone missing-at-random
// dropout (mediator and outcome always missing together).

namespace swpce {

struct ObservationRecord {
  std::string cluster_id;
  std::string individual_id;  // unique within cluster
  int period = 0;             // 1-based
  int treatment = 0;          // Z_jt
  std::optional<double> mediator;
  std::optional<int> outcome;
  int source_line = 0;  // CSV provenance, 0 if constructed in memory

  bool observed() const { return mediator.has_value() && outcome.has_value(); }
};

struct ClusterInfo {
  std::string id;
  std::vector<int> treatment_by_period;  // index t-1; -1 where no record exists
  std::vector<std::string> individuals;  // sorted ids
};

class TrialDataset {
 public:
  TrialDataset() = default;

  /// Canonicalizes record order (cluster, individual, period) and derives the
  /// cluster table. Does not validate; see validate().
  static TrialDataset from_records(std::vector<ObservationRecord> records);

  int n_periods() const { return n_periods_; }
  const std::vector<ObservationRecord>& records() const { return records_; }
  const std::vector<ClusterInfo>& clusters() const { return clusters_; }

  int n_clusters() const { return static_cast<int>(clusters_.size()); }
  int n_individuals() const { return n_individuals_; }

  int cluster_index(const std::string& cluster_id) const;
  /// Dense index over all (cluster, individual) pairs, -1 if unknown.
  int individual_index(const std::string& cluster_id, const std::string& individual_id) const;

  /// Treatment of cluster at period t (1-based); -1 when no record pins it down.
  int treatment_at(int cluster_idx, int period) const;

 private:
  std::vector<ObservationRecord> records_;
  std::vector<ClusterInfo> clusters_;
  std::map<std::string, int> cluster_idx_;
  std::map<std::pair<std::string, std::string>, int> individual_idx_;
  int n_periods_ = 0;
  int n_individuals_ = 0;
};

struct ValidationIssue {
  std::string kind;    // staggered-rollout | simultaneous-missingness | ...
  std::string where;   // "cluster=.. individual=.. period=.."
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
  std::string to_string() const;
};

/// Checks every dataset invariant and reports all violations; never throws.
ValidationReport validate(const TrialDataset& data);

struct LaggedRow {
  int cluster = 0;     // dense cluster index
  int individual = 0;  // dense individual index
  int period = 0;
  int z = 0;
  double m = 0.0;
  int y = 0;
  int z_lag = 0;       // Z_{j,t-1}; 0 at t = 1
  bool has_lag = false;
  double m_lag = 0.0;  // valid iff has_lag
  int y_lag = 0;       // valid iff has_lag
};

struct LaggedView {
  std::vector<LaggedRow> rows;
  std::string warning;  // set when the view is unexpectedly empty
};

/// Rows with observed (M, Y); with require_lag, only periods >=
/// first_outcome_period whose lagged mediator is also observed.
LaggedView observed_rows(const TrialDataset& data, bool require_lag,
                         int first_outcome_period = 2);

/// Reads the CSV interface format and validates; throws ParseError on
/// malformed input and ValidationError when invariants fail.
TrialDataset load_csv(const std::string& path);

/// Canonical CSV writer (records in dataset order, shortest number formatting).
void write_csv(const TrialDataset& data, const std::string& path);
std::string to_csv(const TrialDataset& data);

}  // namespace swpce
