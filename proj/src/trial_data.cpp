#include "swpce/trial_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "swpce/interval.hpp"  // format_double

namespace swpce {

namespace {

const char* kHeader = "cluster_id,individual_id,period,treatment,mediator,outcome";

std::string locate(const ObservationRecord& r) {
  std::string s = "cluster=" + r.cluster_id + " individual=" + r.individual_id +
                  " period=" + std::to_string(r.period);
  if (r.source_line > 0) s += " line=" + std::to_string(r.source_line);
  return s;
}

}  // namespace

TrialDataset TrialDataset::from_records(std::vector<ObservationRecord> records) {
  TrialDataset d;
  std::sort(records.begin(), records.end(),
            [](const ObservationRecord& a, const ObservationRecord& b) {
              if (a.cluster_id != b.cluster_id) return a.cluster_id < b.cluster_id;
              if (a.individual_id != b.individual_id) return a.individual_id < b.individual_id;
              return a.period < b.period;
            });
  d.records_ = std::move(records);
  for (const auto& r : d.records_) d.n_periods_ = std::max(d.n_periods_, r.period);

  for (const auto& r : d.records_) {
    auto [it, inserted] = d.cluster_idx_.try_emplace(r.cluster_id, 0);
    (void)it;
    (void)inserted;
  }
  int ci = 0;
  d.clusters_.resize(d.cluster_idx_.size());
  for (auto& [id, idx] : d.cluster_idx_) {
    idx = ci;
    d.clusters_[ci].id = id;
    d.clusters_[ci].treatment_by_period.assign(static_cast<std::size_t>(d.n_periods_), -1);
    ++ci;
  }
  for (const auto& r : d.records_) {
    const int c = d.cluster_idx_.at(r.cluster_id);
    auto key = std::make_pair(r.cluster_id, r.individual_id);
    if (d.individual_idx_.find(key) == d.individual_idx_.end()) {
      d.individual_idx_.emplace(key, 0);
      d.clusters_[c].individuals.push_back(r.individual_id);
    }
    // First record seen pins the cluster-period treatment; validate() flags
    // any disagreement.
    int& z = d.clusters_[c].treatment_by_period[static_cast<std::size_t>(r.period - 1)];
    if (z < 0) z = r.treatment;
  }
  int ii = 0;
  for (auto& [key, idx] : d.individual_idx_) idx = ii++;
  d.n_individuals_ = ii;
  for (auto& cl : d.clusters_) std::sort(cl.individuals.begin(), cl.individuals.end());
  return d;
}

int TrialDataset::cluster_index(const std::string& cluster_id) const {
  auto it = cluster_idx_.find(cluster_id);
  return it == cluster_idx_.end() ? -1 : it->second;
}

int TrialDataset::individual_index(const std::string& cluster_id,
                                   const std::string& individual_id) const {
  auto it = individual_idx_.find({cluster_id, individual_id});
  return it == individual_idx_.end() ? -1 : it->second;
}

int TrialDataset::treatment_at(int cluster_idx, int period) const {
  if (cluster_idx < 0 || cluster_idx >= n_clusters() || period < 1 || period > n_periods_) {
    return -1;
  }
  return clusters_[static_cast<std::size_t>(cluster_idx)]
      .treatment_by_period[static_cast<std::size_t>(period - 1)];
}

std::string ValidationReport::to_string() const {
  if (ok()) return "ok";
  std::ostringstream os;
  os << issues.size() << " invariant violation(s):\n";
  for (const auto& i : issues) {
    os << "  [" << i.kind << "] " << i.where << ": " << i.detail << "\n";
  }
  return os.str();
}

ValidationReport validate(const TrialDataset& data) {
  ValidationReport rep;
  const int T = data.n_periods();

  // Per-record checks and cluster-period treatment consistency.
  for (const auto& r : data.records()) {
    if (r.mediator.has_value() != r.outcome.has_value()) {
      rep.issues.push_back({"simultaneous-missingness", locate(r),
                            r.mediator.has_value() ? "mediator present but outcome missing"
                                                   : "outcome present but mediator missing"});
    }
    const int c = data.cluster_index(r.cluster_id);
    const int z = data.treatment_at(c, r.period);
    if (z >= 0 && r.treatment != z) {
      rep.issues.push_back({"treatment-inconsistency", locate(r),
                            "treatment disagrees with other records of this cluster-period"});
    }
  }

  // Staggered rollout per cluster (skipping unknown periods).
  for (const auto& cl : data.clusters()) {
    int prev = -1;
    for (int t = 1; t <= T; ++t) {
      const int z = cl.treatment_by_period[static_cast<std::size_t>(t - 1)];
      if (z < 0) continue;
      if (prev >= 0 && z < prev) {
        rep.issues.push_back({"staggered-rollout", "cluster=" + cl.id,
                              "treatment drops from 1 to 0 at period " + std::to_string(t)});
      }
      prev = z;
    }
  }

  // Per-individual: duplicates, closed cohort (prefix presence), monotone dropout.
  std::map<std::pair<std::string, std::string>, std::vector<const ObservationRecord*>> by_ind;
  for (const auto& r : data.records()) {
    by_ind[{r.cluster_id, r.individual_id}].push_back(&r);
  }
  for (const auto& [key, recs] : by_ind) {
    std::vector<const ObservationRecord*> by_period(static_cast<std::size_t>(T), nullptr);
    for (const auto* r : recs) {
      auto& slot = by_period[static_cast<std::size_t>(r->period - 1)];
      if (slot != nullptr) {
        rep.issues.push_back({"duplicate-record", locate(*r), "repeated (cluster, individual, period)"});
      } else {
        slot = r;
      }
    }
    // Closed cohort: records must occupy a prefix 1..k of the periods.
    int last_present = 0;
    for (int t = 1; t <= T; ++t) {
      if (by_period[static_cast<std::size_t>(t - 1)] != nullptr) last_present = t;
    }
    for (int t = 1; t <= last_present; ++t) {
      if (by_period[static_cast<std::size_t>(t - 1)] == nullptr) {
        rep.issues.push_back(
            {"closed-cohort",
             "cluster=" + key.first + " individual=" + key.second,
             "no record at period " + std::to_string(t) + " but present later"});
      }
    }
    // Monotone dropout: absent rows count as missing.
    bool missing_seen = false;
    for (int t = 1; t <= T; ++t) {
      const auto* r = by_period[static_cast<std::size_t>(t - 1)];
      const bool obs = r != nullptr && r->observed();
      if (!obs) {
        missing_seen = true;
      } else if (missing_seen) {
        rep.issues.push_back({"monotone-dropout", locate(*r),
                              "observed after an earlier missing period"});
      }
    }
  }
  return rep;
}

LaggedView observed_rows(const TrialDataset& data, bool require_lag, int first_outcome_period) {
  LaggedView view;
  const int T = data.n_periods();

  std::map<std::pair<std::string, std::string>, std::vector<const ObservationRecord*>> by_ind;
  for (const auto& r : data.records()) by_ind[{r.cluster_id, r.individual_id}].push_back(&r);

  for (const auto& [key, recs] : by_ind) {
    std::vector<const ObservationRecord*> by_period(static_cast<std::size_t>(T), nullptr);
    for (const auto* r : recs) by_period[static_cast<std::size_t>(r->period - 1)] = r;
    const int c = data.cluster_index(key.first);
    const int ind = data.individual_index(key.first, key.second);
    for (int t = 1; t <= T; ++t) {
      const auto* r = by_period[static_cast<std::size_t>(t - 1)];
      if (r == nullptr || !r->observed()) continue;
      LaggedRow row;
      row.cluster = c;
      row.individual = ind;
      row.period = t;
      row.z = r->treatment;
      row.m = *r->mediator;
      row.y = *r->outcome;
      row.z_lag = t >= 2 ? std::max(0, data.treatment_at(c, t - 1)) : 0;
      const auto* prev = t >= 2 ? by_period[static_cast<std::size_t>(t - 2)] : nullptr;
      if (prev != nullptr && prev->observed()) {
        row.has_lag = true;
        row.m_lag = *prev->mediator;
        row.y_lag = *prev->outcome;
      }
      if (require_lag && (t < first_outcome_period || !row.has_lag)) continue;
      view.rows.push_back(row);
    }
  }
  if (view.rows.empty()) {
    view.warning = require_lag
                       ? "no observed rows with an observed lagged mediator"
                       : "no observed rows";
  }
  return view;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

int parse_int(const std::string& s, const char* what, int line) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ParseError(std::string("invalid ") + what + " '" + s + "'", line);
  }
  return v;
}

double parse_real(const std::string& s, const char* what, int line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError(std::string("invalid ") + what + " '" + s + "'", line);
  }
  return v;
}

}  // namespace

TrialDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file '" + path + "'", 1);
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  if (line != kHeader) {
    throw ParseError("bad header; expected '" + std::string(kHeader) + "'", 1);
  }
  std::vector<ObservationRecord> records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split_fields(line);
    if (f.size() != 6) {
      throw ParseError("expected 6 fields, got " + std::to_string(f.size()), lineno);
    }
    ObservationRecord r;
    r.cluster_id = f[0];
    r.individual_id = f[1];
    if (r.cluster_id.empty() || r.individual_id.empty()) {
      throw ParseError("empty identifier", lineno);
    }
    r.period = parse_int(f[2], "period", lineno);
    if (r.period < 1) throw ParseError("period must be >= 1", lineno);
    r.treatment = parse_int(f[3], "treatment", lineno);
    if (r.treatment != 0 && r.treatment != 1) {
      throw ParseError("treatment must be 0 or 1", lineno);
    }
    if (!f[4].empty()) r.mediator = parse_real(f[4], "mediator", lineno);
    if (!f[5].empty()) {
      const int y = parse_int(f[5], "outcome", lineno);
      if (y != 0 && y != 1) throw ParseError("outcome must be 0 or 1", lineno);
      r.outcome = y;
    }
    r.source_line = lineno;
    records.push_back(std::move(r));
  }
  TrialDataset d = TrialDataset::from_records(std::move(records));
  ValidationReport rep = validate(d);
  if (!rep.ok()) throw ValidationError("dataset '" + path + "' invalid:\n" + rep.to_string());
  return d;
}

std::string to_csv(const TrialDataset& data) {
  std::string out(kHeader);
  out.push_back('\n');
  for (const auto& r : data.records()) {
    out += r.cluster_id;
    out.push_back(',');
    out += r.individual_id;
    out.push_back(',');
    out += std::to_string(r.period);
    out.push_back(',');
    out += std::to_string(r.treatment);
    out.push_back(',');
    if (r.mediator) out += format_double(*r.mediator);
    out.push_back(',');
    if (r.outcome) out += std::to_string(*r.outcome);
    out.push_back('\n');
  }
  return out;
}

void write_csv(const TrialDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << to_csv(data);
}

}  // namespace swpce
