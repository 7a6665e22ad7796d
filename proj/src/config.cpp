#include "swpce/config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "swpce/errors.hpp"

namespace swpce {

using nlohmann::json;
using nlohmann::ordered_json;

TruthParams default_truth(int n_periods) {
  TruthParams t;
  t.params.eta1 = {0.3, 0.5, 0.6, 0.7, 0.8};
  t.params.eta1.resize(static_cast<std::size_t>(n_periods), 0.8);
  for (int p = 2; p <= n_periods; ++p) t.outcome_periods.push_back(p);
  t.params.eta2 = {-0.8, -0.6, -0.5, -0.4};
  t.params.eta2.resize(t.outcome_periods.size(), -0.4);
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

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  cfg.design = DesignSpec{};
  cfg.design.dropout_hazard = 0.03;
  cfg.truth = default_truth(cfg.design.n_periods);
  return cfg;
}

std::string RunConfig::resolved_data_path() const {
  return data_path.empty() ? workspace + "/data.csv" : data_path;
}

std::uint64_t require_seed(const RunConfig& cfg) {
  if (!cfg.seed.has_value()) {
    throw Error("config error: required field 'seed' is missing (set it in the config file "
                "or pass --seed)");
  }
  return *cfg.seed;
}

namespace {

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

Interval interval_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) {
    throw Error("config error: an interval must be a [lo, hi] pair");
  }
  auto endpoint = [](const json& e, bool lo) {
    if (e.is_null()) {
      return lo ? -std::numeric_limits<double>::infinity()
                : std::numeric_limits<double>::infinity();
    }
    if (e.is_string()) {
      const std::string s = e.get<std::string>();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
      if (s == "inf") return std::numeric_limits<double>::infinity();
      throw Error("config error: interval endpoint '" + s + "' not understood");
    }
    return e.get<double>();
  };
  return Interval{endpoint(j[0], true), endpoint(j[1], false)};
}

void truth_from_json(const json& j, TruthParams& t, int n_periods) {
  maybe(j, "eta1", t.params.eta1);
  if (j.contains("outcome_periods")) {
    t.outcome_periods = j.at("outcome_periods").get<std::vector<int>>();
  }
  maybe(j, "eta2", t.params.eta2);
  maybe(j, "gamma1", t.params.gamma1);
  if (j.contains("beta")) {
    const auto b = j.at("beta").get<std::vector<double>>();
    if (b.size() != 4) throw Error("config error: truth.beta must have 4 entries");
    t.params.beta1 = b[0];
    t.params.beta2 = b[1];
    t.params.beta3 = b[2];
    t.params.beta4 = b[3];
  }
  maybe(j, "sigma_eps", t.params.sigma_eps);
  if (j.contains("sigma_alpha")) {
    const auto s = j.at("sigma_alpha").get<std::vector<double>>();
    if (s.size() != 2) throw Error("config error: truth.sigma_alpha must have 2 entries");
    t.params.sigma_alpha1 = s[0];
    t.params.sigma_alpha2 = s[1];
  }
  maybe(j, "rho_alpha", t.params.rho_alpha);
  if (j.contains("sigma_phi")) {
    const auto s = j.at("sigma_phi").get<std::vector<double>>();
    if (s.size() != 2) throw Error("config error: truth.sigma_phi must have 2 entries");
    t.params.sigma_phi1 = s[0];
    t.params.sigma_phi2 = s[1];
  }
  maybe(j, "rho_phi", t.params.rho_phi);
  maybe(j, "mediator_lag", t.mediator_lag);
  maybe(j, "rho", t.rho);
  maybe(j, "lambda0", t.lambda0);
  maybe(j, "lambda1", t.lambda1);
  if (static_cast<int>(t.params.eta1.size()) != n_periods) {
    throw Error("config error: truth.eta1 must have one entry per period");
  }
  if (t.params.eta2.size() != t.outcome_periods.size()) {
    throw Error("config error: truth.eta2 must align with truth.outcome_periods");
  }
}

}  // namespace

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config error: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("config error: " + std::string(e.what()));
  }
  RunConfig cfg = RunConfig::defaults();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  maybe(j, "workspace", cfg.workspace);
  maybe(j, "data", cfg.data_path);
  maybe(j, "threads", cfg.threads);

  if (j.contains("design")) {
    const json& d = j.at("design");
    maybe(d, "clusters", cfg.design.n_clusters);
    maybe(d, "periods", cfg.design.n_periods);
    maybe(d, "cohort_size", cfg.design.cohort_size);
    maybe(d, "start_periods", cfg.design.start_periods);
    maybe(d, "dropout_hazard", cfg.design.dropout_hazard);
    maybe(d, "dropout_m_coef", cfg.design.dropout_m_coef);
    maybe(d, "dropout_y_coef", cfg.design.dropout_y_coef);
  }
  cfg.truth = default_truth(cfg.design.n_periods);
  if (j.contains("truth")) truth_from_json(j.at("truth"), cfg.truth, cfg.design.n_periods);

  if (j.contains("priors")) {
    const json& p = j.at("priors");
    maybe(p, "fixed_effect_sd", cfg.priors.fixed_effect_sd);
    maybe(p, "scale_rate", cfg.priors.scale_rate);
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    maybe(s, "chains", cfg.sampler.chains);
    maybe(s, "warmup", cfg.sampler.warmup);
    maybe(s, "samples", cfg.sampler.samples);
    maybe(s, "target_accept", cfg.sampler.target_accept);
    maybe(s, "max_leapfrog", cfg.sampler.max_leapfrog);
    maybe(s, "store_latents", cfg.sampler.store_latents);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    maybe(m, "outcome_periods", cfg.outcome_periods);
    maybe(m, "mediator_lag", cfg.mediator_lag);
  }
  if (j.contains("calibrate")) {
    const json& c = j.at("calibrate");
    maybe(c, "per_period", cfg.calibrate.per_period);
    maybe(c, "lambda_per_draw", cfg.calibrate.lambda_per_draw);
  }
  if (j.contains("pce")) {
    const json& p = j.at("pce");
    maybe(p, "periods", cfg.pce.periods);
    maybe(p, "delta", cfg.pce.delta);
    maybe(p, "mc_size", cfg.pce.mc_size);
    maybe(p, "quadrature_order", cfg.pce.quadrature_order);
    maybe(p, "exact_delta", cfg.pce.exact_delta);
    if (p.contains("link")) {
      const std::string link = p.at("link").get<std::string>();
      if (link == "logit") {
        cfg.pce.link = Link::logit;
      } else if (link == "identity") {
        cfg.pce.link = Link::identity;
      } else {
        throw Error("config error: pce.link must be 'logit' or 'identity'");
      }
    }
    if (p.contains("intervals") && !p.at("intervals").is_null()) {
      cfg.pce.intervals.clear();
      for (const auto& iv : p.at("intervals")) cfg.pce.intervals.push_back(interval_from_json(iv));
    }
    if (p.contains("rho_grid") && !p.at("rho_grid").is_null()) {
      cfg.pce.rho_grid_override = p.at("rho_grid").get<std::vector<double>>();
    }
    if (p.contains("lambda") && !p.at("lambda").is_null()) {
      const auto l = p.at("lambda").get<std::vector<double>>();
      if (l.size() != 2) throw Error("config error: pce.lambda must be [lambda0, lambda1]");
      cfg.pce.fixed_lambda = {l[0], l[1]};
    }
  }
  return cfg;
}

ordered_json RunConfig::echo() const {
  ordered_json j;
  if (seed) j["seed"] = *seed;
  j["workspace"] = workspace;
  j["data"] = resolved_data_path();
  j["threads"] = threads;
  j["design"] = {{"clusters", design.n_clusters},
                 {"periods", design.n_periods},
                 {"cohort_size", design.cohort_size},
                 {"start_periods", design.start_periods.empty()
                                       ? DesignSpec::staircase(design.n_clusters, design.n_periods)
                                       : design.start_periods},
                 {"dropout_hazard", design.dropout_hazard},
                 {"dropout_m_coef", design.dropout_m_coef},
                 {"dropout_y_coef", design.dropout_y_coef}};
  j["truth"] = {{"eta1", truth.params.eta1},
                {"eta2", truth.params.eta2},
                {"outcome_periods", truth.outcome_periods},
                {"mediator_lag", truth.mediator_lag},
                {"gamma1", truth.params.gamma1},
                {"beta", {truth.params.beta1, truth.params.beta2, truth.params.beta3,
                          truth.params.beta4}},
                {"sigma_eps", truth.params.sigma_eps},
                {"sigma_alpha", {truth.params.sigma_alpha1, truth.params.sigma_alpha2}},
                {"rho_alpha", truth.params.rho_alpha},
                {"sigma_phi", {truth.params.sigma_phi1, truth.params.sigma_phi2}},
                {"rho_phi", truth.params.rho_phi},
                {"rho", truth.rho},
                {"lambda0", truth.lambda0},
                {"lambda1", truth.lambda1}};
  j["priors"] = {{"fixed_effect_sd", priors.fixed_effect_sd}, {"scale_rate", priors.scale_rate}};
  j["sampler"] = {{"chains", sampler.chains},
                  {"warmup", sampler.warmup},
                  {"samples", sampler.samples},
                  {"target_accept", sampler.target_accept},
                  {"max_leapfrog", sampler.max_leapfrog},
                  {"store_latents", sampler.store_latents}};
  j["model"] = {{"outcome_periods", outcome_periods}, {"mediator_lag", mediator_lag}};
  j["calibrate"] = {{"per_period", calibrate.per_period},
                    {"lambda_per_draw", calibrate.lambda_per_draw}};
  ordered_json pj;
  pj["periods"] = pce.periods;
  pj["delta"] = pce.delta;
  pj["mc_size"] = pce.mc_size;
  pj["quadrature_order"] = pce.quadrature_order;
  pj["link"] = pce.link == Link::logit ? "logit" : "identity";
  pj["exact_delta"] = pce.exact_delta;
  if (pce.rho_grid_override) pj["rho_grid"] = *pce.rho_grid_override;
  if (pce.fixed_lambda) pj["lambda"] = {pce.fixed_lambda->first, pce.fixed_lambda->second};
  if (!pce.intervals.empty()) {
    ordered_json arr = ordered_json::array();
    for (const auto& iv : pce.intervals) {
      ordered_json pair = ordered_json::array();
      if (std::isinf(iv.lo)) pair.push_back("-inf"); else pair.push_back(iv.lo);
      if (std::isinf(iv.hi)) pair.push_back("inf"); else pair.push_back(iv.hi);
      arr.push_back(pair);
    }
    pj["intervals"] = arr;
  }
  j["pce"] = pj;
  return j;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot hash '" + path + "': file not found");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace swpce
