// swpce: simulate / fit / calibrate / pce / report for principal causal
// effects with a continuous intermediate variable in stepped-wedge trials.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "swpce/calibration.hpp"
#include "swpce/config.hpp"
#include "swpce/pce.hpp"
#include "swpce/sampler.hpp"
#include "swpce/simulator.hpp"
#include "swpce/trial_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSamplerQuality = 3;
constexpr int kExitCalibration = 4;

struct GlobalOpts {
  std::string config_path;
  std::string workspace;
  std::optional<std::uint64_t> seed;
  int threads = -1;
  std::string data;
  std::string draws;
  std::string calibration;
  bool delta_sweep = false;
  int sweep_period = 0;
  bool exact_delta = false;
};

swpce::RunConfig load_config(const GlobalOpts& g) {
  swpce::RunConfig cfg = g.config_path.empty() ? swpce::RunConfig::defaults()
                                               : swpce::RunConfig::from_json_file(g.config_path);
  if (g.seed) cfg.seed = g.seed;
  if (!g.workspace.empty()) cfg.workspace = g.workspace;
  if (g.threads >= 0) cfg.threads = g.threads;
  if (!g.data.empty()) cfg.data_path = g.data;
  if (g.exact_delta) cfg.pce.exact_delta = true;
  return cfg;
}

void write_text(const std::string& path, const std::string& content) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw swpce::Error("cannot write '" + path + "'");
  out << content;
}

void write_json(const std::string& path, const ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

void require_artifact(const std::string& path, const char* what) {
  if (!fs::exists(path)) {
    throw swpce::Error(std::string("missing artifact: ") + what + " not found at '" + path + "'");
  }
}

swpce::ModelStructure structure_for(const swpce::RunConfig& cfg,
                                    const swpce::TrialDataset& data) {
  return swpce::ModelStructure::infer(data, cfg.outcome_periods, cfg.mediator_lag);
}

int cmd_simulate(const GlobalOpts& g) {
  swpce::RunConfig cfg = load_config(g);
  const std::uint64_t seed = swpce::require_seed(cfg);
  fs::create_directories(cfg.workspace);
  const swpce::TrialDataset data = swpce::simulate_trial(cfg.design, cfg.truth, seed);
  const auto report = swpce::validate(data);
  if (!report.ok()) {
    throw swpce::ValidationError("simulated data invalid:\n" + report.to_string());
  }
  const std::string data_path = cfg.resolved_data_path();
  swpce::write_csv(data, data_path);

  ordered_json manifest;
  manifest["artifact"] = "truth";
  manifest["data"] = data_path;
  manifest["data_hash"] = swpce::file_hash_hex(data_path);
  manifest["config"] = cfg.echo();
  write_json(cfg.workspace + "/truth.json", manifest);
  std::cout << "wrote " << data_path << " (" << data.records().size() << " records, "
            << data.n_clusters() << " clusters, T=" << data.n_periods() << ")\n";
  return 0;
}

int cmd_fit(const GlobalOpts& g) {
  swpce::RunConfig cfg = load_config(g);
  const std::uint64_t seed = swpce::require_seed(cfg);
  fs::create_directories(cfg.workspace);
  const std::string data_path = cfg.resolved_data_path();
  require_artifact(data_path, "dataset");
  const swpce::TrialDataset data = swpce::load_csv(data_path);
  swpce::SamplerConfig scfg = cfg.sampler;
  scfg.seed = seed;
  const swpce::FitResult fit = swpce::fit(data, cfg.priors, scfg, structure_for(cfg, data));

  const std::string draws_path = cfg.workspace + "/draws.csv";
  swpce::write_draws_csv(fit.draws, draws_path);

  ordered_json manifest;
  manifest["artifact"] = "fit";
  manifest["draws"] = draws_path;
  manifest["data_hash"] = swpce::file_hash_hex(data_path);
  manifest["config"] = cfg.echo();
  manifest["accept_rate"] = fit.draws.accept_rate;
  manifest["step_size"] = fit.draws.step_size;
  manifest["divergences"] = fit.draws.divergences;
  write_json(cfg.workspace + "/fit_manifest.json", manifest);

  ordered_json diag;
  diag["divergences"] = fit.diag.divergences;
  diag["warnings"] = fit.diag.warnings;
  ordered_json per_coord = ordered_json::array();
  std::printf("%-22s %10s %10s\n", "coordinate", "Rhat", "bulk-ESS");
  for (std::size_t k = 0; k < fit.diag.names.size(); ++k) {
    std::printf("%-22s %10.4f %10.1f\n", fit.diag.names[k].c_str(), fit.diag.rhat[k],
                fit.diag.ess[k]);
    per_coord.push_back({{"name", fit.diag.names[k]},
                         {"rhat", fit.diag.rhat[k]},
                         {"ess", fit.diag.ess[k]}});
  }
  diag["coordinates"] = per_coord;
  write_json(cfg.workspace + "/diagnostics.json", diag);

  const double total =
      static_cast<double>(fit.draws.n_chains) * fit.draws.n_samples_per_chain;
  if (fit.draws.divergences > 0.2 * total) {
    std::cerr << "error: divergence rate " << fit.draws.divergences << "/" << total
              << " exceeds 20%\n";
    return kExitSamplerQuality;
  }
  std::cout << "wrote " << draws_path << " (" << fit.draws.n_draws() << " draws)\n";
  return 0;
}

int cmd_calibrate(const GlobalOpts& g) {
  swpce::RunConfig cfg = load_config(g);
  fs::create_directories(cfg.workspace);
  const std::string data_path = cfg.resolved_data_path();
  const std::string draws_path = g.draws.empty() ? cfg.workspace + "/draws.csv" : g.draws;
  require_artifact(data_path, "dataset");
  require_artifact(draws_path, "draws file");
  const swpce::TrialDataset data = swpce::load_csv(data_path);
  const swpce::PosteriorDraws draws = swpce::read_draws_csv(draws_path);

  swpce::SensitivityBounds bounds;
  try {
    bounds = swpce::estimate_rho_star(data, cfg.calibrate.per_period);
  } catch (const swpce::EstimationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCalibration;
  }
  const swpce::LaggedView lagged = swpce::observed_rows(data, true);
  swpce::AuxiliaryCoefficients aux;
  try {
    aux = swpce::fit_auxiliary_glm(lagged);
  } catch (const swpce::EstimationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCalibration;
  }
  swpce::lambda_bounds(aux, draws, bounds);
  const std::vector<double> grid = swpce::rho_grid(bounds.rho_star);

  ordered_json j;
  j["rho_star"] = bounds.rho_star;
  j["n_transition"] = bounds.n_transition;
  if (cfg.calibrate.per_period) {
    ordered_json by_t = ordered_json::object();
    for (const auto& [t, r] : bounds.rho_star_by_period) by_t[std::to_string(t)] = r;
    j["rho_star_by_period"] = by_t;
    ordered_json n_t = ordered_json::object();
    for (const auto& [t, n] : bounds.n_by_period) n_t[std::to_string(t)] = n;
    j["n_by_period"] = n_t;
  }
  j["rho_grid"] = grid;
  j["lambda0"] = {{"lower", bounds.lambda0_lower},
                  {"upper", bounds.lambda0_upper},
                  {"fallback", bounds.lambda0_fallback() ? "midpoint" : "none"}};
  j["lambda1"] = {{"lower", bounds.lambda1_lower},
                  {"upper", bounds.lambda1_upper},
                  {"fallback", bounds.lambda1_fallback() ? "midpoint" : "none"}};
  j["zeta"] = {aux.zeta[0], aux.zeta[1], aux.zeta[2]};
  j["theta"] = {aux.theta[0], aux.theta[1], aux.theta[2]};
  j["aux_rows"] = aux.n_rows;
  j["lambda_per_draw"] = cfg.calibrate.lambda_per_draw;
  j["config"] = cfg.echo();
  write_json(cfg.workspace + "/calibration.json", j);
  std::cout << "rho* = " << swpce::format_double(bounds.rho_star) << " over |C| = "
            << bounds.n_transition << "; grid size " << grid.size() << "\n";
  return 0;
}

swpce::SensitivityConfig sensitivity_from_json(const json& cal, const swpce::RunConfig& cfg) {
  swpce::SensitivityConfig sens;
  sens.bounds.rho_star = cal.at("rho_star").get<double>();
  sens.bounds.lambda0_lower = cal.at("lambda0").at("lower").get<double>();
  sens.bounds.lambda0_upper = cal.at("lambda0").at("upper").get<double>();
  sens.bounds.lambda1_lower = cal.at("lambda1").at("lower").get<double>();
  sens.bounds.lambda1_upper = cal.at("lambda1").at("upper").get<double>();
  sens.rho_grid = cal.at("rho_grid").get<std::vector<double>>();
  sens.per_draw_upper = cfg.calibrate.lambda_per_draw;
  if (cfg.pce.rho_grid_override) sens.rho_grid = *cfg.pce.rho_grid_override;
  if (cfg.pce.fixed_lambda) {
    sens.bounds.lambda0_lower = sens.bounds.lambda0_upper = cfg.pce.fixed_lambda->first;
    sens.bounds.lambda1_lower = sens.bounds.lambda1_upper = cfg.pce.fixed_lambda->second;
    sens.per_draw_upper = false;
  }
  return sens;
}

ordered_json summaries_json(const swpce::PceEstimate& est, bool with_delta) {
  ordered_json arr = ordered_json::array();
  for (const auto& c : est.cells) {
    ordered_json row;
    row["period"] = c.period;
    row["interval"] = c.interval.label();
    if (with_delta) row["delta"] = c.delta;
    row["rho"] = c.rho;
    row["mean"] = c.mean;
    row["q025"] = c.q025;
    row["q975"] = c.q975;
    row["n_ok"] = c.n_ok;
    row["n_failed"] = c.n_failed;
    arr.push_back(row);
  }
  return arr;
}

std::string pce_csv(const swpce::PceEstimate& est) {
  std::string out = "period,interval,rho,draw,lambda0,lambda1,numerator,denominator,pce\n";
  for (const auto& r : est.samples) {
    if (!r.ok) continue;
    out += std::to_string(r.period);
    out += ",\"" + r.interval_label + "\",";
    out += swpce::format_double(r.rho);
    out += "," + std::to_string(r.draw);
    out += "," + swpce::format_double(r.lambda0);
    out += "," + swpce::format_double(r.lambda1);
    out += "," + swpce::format_double(r.numerator);
    out += "," + swpce::format_double(r.denominator);
    out += "," + swpce::format_double(r.pce);
    out += "\n";
  }
  return out;
}

int cmd_pce(const GlobalOpts& g) {
  swpce::RunConfig cfg = load_config(g);
  const std::uint64_t seed = swpce::require_seed(cfg);
  fs::create_directories(cfg.workspace);
  const std::string data_path = cfg.resolved_data_path();
  const std::string draws_path = g.draws.empty() ? cfg.workspace + "/draws.csv" : g.draws;
  const std::string cal_path =
      g.calibration.empty() ? cfg.workspace + "/calibration.json" : g.calibration;
  require_artifact(data_path, "dataset");
  require_artifact(draws_path, "draws file");
  require_artifact(cal_path, "calibration report");

  const swpce::TrialDataset data = swpce::load_csv(data_path);
  const swpce::ModelStructure structure = structure_for(cfg, data);
  if (structure.mediator_lag != 0) {
    throw swpce::Error("pce: mediator_lag = 1 fits are excluded from PCE computation");
  }
  const swpce::PosteriorDraws draws = swpce::read_draws_csv(draws_path);
  {
    const auto expected = swpce::param_names(structure);
    if (draws.names.size() < expected.size() ||
        !std::equal(expected.begin(), expected.end(), draws.names.begin())) {
      throw swpce::Error("pce: draws file coordinates do not match the model structure; "
                         "was it produced by `fit` with the same config?");
    }
  }
  // Advisory gate: surface poor sampler diagnostics before spending compute.
  if (fs::exists(cfg.workspace + "/diagnostics.json")) {
    json diag;
    std::ifstream in(cfg.workspace + "/diagnostics.json");
    in >> diag;
    double max_rhat = 0.0;
    for (const auto& c : diag.value("coordinates", json::array())) {
      const double r = c.value("rhat", 1.0);
      if (std::isfinite(r)) max_rhat = std::max(max_rhat, r);
    }
    if (max_rhat > 1.05) {
      std::cerr << "warning: max Rhat " << max_rhat
                << " exceeds 1.05; PCE posteriors may be unreliable\n";
    }
  }
  json cal;
  {
    std::ifstream in(cal_path);
    in >> cal;
  }
  const swpce::SensitivityConfig sens = sensitivity_from_json(cal, cfg);

  std::vector<int> periods = cfg.pce.periods.empty() ? structure.outcome_periods : cfg.pce.periods;
  swpce::PceQuery query;
  query.mc_size = cfg.pce.mc_size;
  query.quadrature_order = cfg.pce.quadrature_order;
  query.link = cfg.pce.link;
  query.exact_delta = cfg.pce.exact_delta;
  query.seed = seed;

  swpce::PceEstimate est;
  bool sweep = g.delta_sweep;
  if (sweep) {
    const int t = g.sweep_period > 0 ? g.sweep_period : periods.front();
    int cell_base = 0;
    for (double delta : {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}) {
      swpce::PceQuery q = query;
      q.intervals = swpce::PceQuery::default_partition(delta);
      q.seed = swpce::RngStream(seed).fork(0x7377ULL, static_cast<std::uint64_t>(cell_base)).next_u64();
      swpce::PceEstimate part = swpce::pce_posterior(draws, structure, sens, q, {t}, cfg.threads);
      for (auto& c : part.cells) c.delta = delta;
      est.cells.insert(est.cells.end(), part.cells.begin(), part.cells.end());
      est.samples.insert(est.samples.end(), part.samples.begin(), part.samples.end());
      est.total_failed += part.total_failed;
      ++cell_base;
    }
  } else {
    swpce::PceQuery q = query;
    q.intervals = cfg.pce.intervals.empty() ? swpce::PceQuery::default_partition(cfg.pce.delta)
                                            : cfg.pce.intervals;
    est = swpce::pce_posterior(draws, structure, sens, q, periods, cfg.threads);
  }

  write_text(cfg.workspace + "/pce_draws.csv", pce_csv(est));

  ordered_json summary;
  summary["mode"] = sweep ? "delta" : "period";
  summary["rows"] = summaries_json(est, sweep);
  summary["config"] = cfg.echo();
  summary["data_hash"] = swpce::file_hash_hex(data_path);
  write_json(cfg.workspace + "/pce_summary.json", summary);

  // Plot-data contract: x = period (or delta), one series per (rho, interval).
  ordered_json plot;
  plot["x_axis"] = sweep ? "delta" : "period";
  std::map<std::pair<std::string, std::string>, ordered_json> series;
  for (const auto& c : est.cells) {
    const auto key = std::make_pair(swpce::format_double(c.rho), c.interval.label());
    if (series.find(key) == series.end()) {
      ordered_json s;
      s["rho"] = c.rho;
      s["interval"] = c.interval.label();
      s["points"] = ordered_json::array();
      series[key] = s;
    }
    ordered_json pt;
    pt["x"] = sweep ? c.delta : static_cast<double>(c.period);
    pt["mean"] = c.mean;
    pt["q025"] = c.q025;
    pt["q975"] = c.q975;
    series[key]["points"].push_back(pt);
  }
  ordered_json series_arr = ordered_json::array();
  for (auto& [k, s] : series) series_arr.push_back(s);
  plot["series"] = series_arr;
  write_json(cfg.workspace + "/plot_data.json", plot);

  std::cout << "wrote " << cfg.workspace << "/pce_draws.csv, pce_summary.json, plot_data.json ("
            << est.cells.size() << " cells, " << est.total_failed << " failed draws)\n";
  return 0;
}

int cmd_report(const GlobalOpts& g) {
  swpce::RunConfig cfg = load_config(g);
  const std::string summary_path = cfg.workspace + "/pce_summary.json";
  require_artifact(summary_path, "PCE summary");
  json summary;
  {
    std::ifstream in(summary_path);
    in >> summary;
  }
  std::string text;
  char line[256];
  text += "PCE posterior summary (mean [2.5%, 97.5%])\n";
  const bool sweep = summary.value("mode", "period") == "delta";
  std::snprintf(line, sizeof(line), "%-8s %-16s %-8s %12s %22s\n", sweep ? "delta" : "period",
                "interval", "rho", "mean", "95% CI");
  text += line;
  for (const auto& row : summary.at("rows")) {
    const double x = sweep ? row.at("delta").get<double>()
                           : static_cast<double>(row.at("period").get<int>());
    std::snprintf(line, sizeof(line), "%-8g %-16s %-8g %12.4f   [%8.4f, %8.4f]\n", x,
                  row.at("interval").get<std::string>().c_str(), row.at("rho").get<double>(),
                  row.at("mean").get<double>(), row.at("q025").get<double>(),
                  row.at("q975").get<double>());
    text += line;
  }
  if (fs::exists(cfg.workspace + "/calibration.json")) {
    json cal;
    std::ifstream in(cfg.workspace + "/calibration.json");
    in >> cal;
    std::snprintf(line, sizeof(line),
                  "calibration: rho* = %.3f (|C| = %d), lambda0 in [%.3f, %.3f], "
                  "lambda1 in [%.3f, %.3f]\n",
                  cal.at("rho_star").get<double>(), cal.at("n_transition").get<int>(),
                  cal.at("lambda0").at("lower").get<double>(),
                  cal.at("lambda0").at("upper").get<double>(),
                  cal.at("lambda1").at("lower").get<double>(),
                  cal.at("lambda1").at("upper").get<double>());
    text += line;
  }
  write_text(cfg.workspace + "/report.txt", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Principal causal effects for stepped-wedge trials"};
  app.require_subcommand(1);
  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--workspace", g.workspace, "artifact directory (overrides config)");
  std::uint64_t seed_flag = 0;
  auto* seed_opt = app.add_option("--seed", seed_flag, "RNG seed (overrides config)");
  app.add_option("--threads", g.threads, "worker threads (0 = hardware)");
  app.add_option("--data", g.data, "dataset CSV path (overrides config)");

  auto* sim = app.add_subcommand("simulate", "generate a synthetic trial dataset");
  auto* fit = app.add_subcommand("fit", "sample the observed-data model posterior");
  auto* cal = app.add_subcommand("calibrate", "calibrate sensitivity parameters");
  auto* pce = app.add_subcommand("pce", "compute PCE posteriors over the calibrated grid");
  auto* rep = app.add_subcommand("report", "render the PCE summary table");
  for (auto* sub : {cal, pce}) {
    sub->add_option("--draws", g.draws, "draws CSV (default <workspace>/draws.csv)");
  }
  pce->add_option("--calibration", g.calibration,
                  "calibration JSON (default <workspace>/calibration.json)");
  pce->add_flag("--delta-sweep", g.delta_sweep, "sweep delta over {0.5,1,...,3}");
  pce->add_option("--period", g.sweep_period, "period for the delta sweep");
  pce->add_flag("--exact-delta", g.exact_delta, "solve delta per sampled point (no interpolation)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }
  if (seed_opt->count() > 0) g.seed = seed_flag;

  try {
    if (sim->parsed()) return cmd_simulate(g);
    if (fit->parsed()) return cmd_fit(g);
    if (cal->parsed()) return cmd_calibrate(g);
    if (pce->parsed()) return cmd_pce(g);
    if (rep->parsed()) return cmd_report(g);
  } catch (const swpce::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
