#include "swpce/sampler.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "swpce/errors.hpp"
#include "swpce/interval.hpp"
#include "swpce/rng.hpp"
#include "swpce/special.hpp"

namespace swpce {

int PosteriorDraws::column(const std::string& name) const {
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (names[k] == name) return static_cast<int>(k);
  }
  return -1;
}

double PosteriorDraws::posterior_mean(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw Error("posterior_mean: unknown coordinate '" + name + "'");
  return draws.col(c).mean();
}

namespace {

struct ChainResult {
  Eigen::MatrixXd draws;
  double accept_rate = 0.0;
  double step_size = 0.0;
  int divergences = 0;
};

struct DualAveraging {
  double mu = 0.0;
  double log_eps = 0.0;
  double log_eps_bar = 0.0;
  double h_bar = 0.0;
  int m = 0;
  static constexpr double kGamma = 0.05, kT0 = 10.0, kKappa = 0.75;

  void reset(double eps0) {
    mu = std::log(10.0 * eps0);
    log_eps = std::log(eps0);
    log_eps_bar = 0.0;
    h_bar = 0.0;
    m = 0;
  }
  void update(double accept_prob, double target) {
    ++m;
    h_bar = (1.0 - 1.0 / (m + kT0)) * h_bar + (target - accept_prob) / (m + kT0);
    log_eps = mu - std::sqrt(static_cast<double>(m)) / kGamma * h_bar;
    const double w = std::pow(m, -kKappa);
    log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
  }
  double eps() const { return std::exp(log_eps); }
  double eps_bar() const { return std::exp(log_eps_bar); }
};

// One leapfrog trajectory; returns the acceptance probability and whether the
// energy error blew up (divergence).
struct Trajectory {
  Eigen::VectorXd q;
  double logp;
  Eigen::VectorXd grad;
  double accept_prob = 0.0;
  bool divergent = false;
  bool accepted = false;
};

void leapfrog_transition(const TargetFn& target, const Eigen::VectorXd& inv_mass, double eps,
                         int n_steps, RngStream& rng, Trajectory& st) {
  const int dim = static_cast<int>(st.q.size());
  Eigen::VectorXd p(dim);
  for (int k = 0; k < dim; ++k) p[k] = rng.normal() / std::sqrt(inv_mass[k]);

  const double kin0 = 0.5 * (p.array().square() * inv_mass.array()).sum();
  const double h0 = -st.logp + kin0;

  Eigen::VectorXd q = st.q;
  Eigen::VectorXd grad = st.grad;
  double logp = st.logp;
  bool bad = false;
  for (int step = 0; step < n_steps; ++step) {
    p += 0.5 * eps * grad;
    q.array() += eps * inv_mass.array() * p.array();
    logp = target(q, grad);
    if (!std::isfinite(logp)) {
      bad = true;
      break;
    }
    p += 0.5 * eps * grad;
  }
  double h1 = std::numeric_limits<double>::infinity();
  if (!bad) {
    const double kin1 = 0.5 * (p.array().square() * inv_mass.array()).sum();
    h1 = -logp + kin1;
  }
  const double delta_h = h0 - h1;  // log acceptance ratio
  st.divergent = !std::isfinite(delta_h) || delta_h < -1000.0;
  st.accept_prob = st.divergent ? 0.0 : std::min(1.0, std::exp(std::min(0.0, delta_h)));
  st.accepted = false;
  if (!st.divergent && std::log(rng.uniform01()) < delta_h) {
    st.q = q;
    st.logp = logp;
    st.grad = grad;
    st.accepted = true;
  }
}

double find_initial_step_size(const TargetFn& target, const Eigen::VectorXd& inv_mass,
                              RngStream& rng, Trajectory& st) {
  // Double/halve until the one-step acceptance probability crosses 1/2.
  double eps = 0.1;
  Trajectory probe = st;
  leapfrog_transition(target, inv_mass, eps, 1, rng, probe);
  double a = probe.accept_prob;
  const double dir = a > 0.5 ? 1.0 : -1.0;
  for (int it = 0; it < 50; ++it) {
    eps *= std::pow(2.0, dir);
    probe = st;
    leapfrog_transition(target, inv_mass, eps, 1, rng, probe);
    a = probe.accept_prob;
    if ((dir > 0 && a < 0.5) || (dir < 0 && a > 0.5)) break;
    if (eps < 1e-10 || eps > 1e4) break;
  }
  return std::max(1e-8, std::min(eps, 10.0));
}

ChainResult run_chain(const TargetFn& target, int dim, const SamplerConfig& cfg, int chain_id,
                      int n_kept) {
  RngStream rng = RngStream(cfg.seed).fork(0x686d63ULL, static_cast<std::uint64_t>(chain_id));

  Trajectory st;
  st.q.resize(dim);
  st.grad.resize(dim);
  const double init_sd = std::sqrt(0.1);
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    for (int k = 0; k < dim; ++k) st.q[k] = init_sd * rng.normal();
    st.logp = target(st.q, st.grad);
    ok = std::isfinite(st.logp) && st.grad.allFinite();
  }
  if (!ok) {
    throw Error("run_hmc: target not finite at any initialization point (chain " +
                std::to_string(chain_id) + ")");
  }

  Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(dim);
  DualAveraging da;
  da.reset(find_initial_step_size(target, inv_mass, rng, st));

  const int warmup = cfg.warmup;
  const int mass_window_lo = warmup / 4;
  const int mass_window_hi = (3 * warmup) / 4;
  Eigen::VectorXd wsum = Eigen::VectorXd::Zero(dim), wsum2 = Eigen::VectorXd::Zero(dim);
  int wn = 0;

  auto draw_steps = [&]() {
    return 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.max_leapfrog)));
  };

  for (int m = 0; m < warmup; ++m) {
    leapfrog_transition(target, inv_mass, da.eps(), draw_steps(), rng, st);
    da.update(st.accept_prob, cfg.target_accept);
    if (m >= mass_window_lo && m < mass_window_hi) {
      wsum += st.q;
      wsum2 += st.q.array().square().matrix();
      ++wn;
    }
    if (m + 1 == mass_window_hi && wn > 10) {
      // Regularized diagonal variance, then restart step-size adaptation.
      const double n = static_cast<double>(wn);
      Eigen::VectorXd var = (wsum2 - wsum.array().square().matrix() / n) / (n - 1.0);
      const double shrink = n / (n + 5.0);
      inv_mass = (var.array().max(0.0) * shrink + 1e-3 * (1.0 - shrink)).matrix();
      inv_mass = inv_mass.array().max(1e-8).matrix();
      da.reset(std::max(1e-8, da.eps_bar()));
    }
  }
  const double eps = warmup > 0 ? da.eps_bar() : 0.1;

  ChainResult res;
  res.step_size = eps;
  res.draws.resize(cfg.samples, n_kept);
  double accept_acc = 0.0;
  for (int s = 0; s < cfg.samples; ++s) {
    leapfrog_transition(target, inv_mass, eps, draw_steps(), rng, st);
    accept_acc += st.accept_prob;
    if (st.divergent) ++res.divergences;
    res.draws.row(s) = st.q.head(n_kept);
  }
  res.accept_rate = cfg.samples > 0 ? accept_acc / cfg.samples : 0.0;
  return res;
}

}  // namespace

PosteriorDraws run_hmc(const TargetFn& target, int dim, const SamplerConfig& cfg,
                       std::vector<std::string> names, int n_kept) {
  if (cfg.chains < 1 || cfg.warmup < 0 || cfg.samples < 1 || cfg.max_leapfrog < 1) {
    throw std::invalid_argument("run_hmc: counts must be positive");
  }
  if (!(cfg.target_accept > 0.0 && cfg.target_accept < 1.0)) {
    throw std::invalid_argument("run_hmc: target_accept must lie in (0, 1)");
  }
  if (n_kept < 0 || n_kept > dim) n_kept = dim;
  if (names.empty()) {
    for (int k = 0; k < n_kept; ++k) names.push_back("x" + std::to_string(k));
  }
  names.resize(static_cast<std::size_t>(n_kept));

  std::vector<ChainResult> results(static_cast<std::size_t>(cfg.chains));
  if (cfg.chains == 1) {
    results[0] = run_chain(target, dim, cfg, 1, n_kept);
  } else {
    std::vector<std::thread> workers;
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (int c = 0; c < cfg.chains; ++c) {
      workers.emplace_back([&, c]() {
        try {
          results[static_cast<std::size_t>(c)] = run_chain(target, dim, cfg, c + 1, n_kept);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  PosteriorDraws out;
  out.names = std::move(names);
  out.n_chains = cfg.chains;
  out.n_samples_per_chain = cfg.samples;
  out.draws.resize(static_cast<Eigen::Index>(cfg.chains) * cfg.samples, n_kept);
  out.chain.resize(static_cast<std::size_t>(cfg.chains) * cfg.samples);
  for (int c = 0; c < cfg.chains; ++c) {
    const auto& r = results[static_cast<std::size_t>(c)];
    out.draws.middleRows(static_cast<Eigen::Index>(c) * cfg.samples, cfg.samples) = r.draws;
    std::fill(out.chain.begin() + static_cast<std::ptrdiff_t>(c) * cfg.samples,
              out.chain.begin() + static_cast<std::ptrdiff_t>(c + 1) * cfg.samples, c + 1);
    out.accept_rate.push_back(r.accept_rate);
    out.step_size.push_back(r.step_size);
    out.divergences += r.divergences;
  }
  return out;
}

namespace {

// Split each chain in half; returns the per-sequence views as (offset, length).
std::vector<std::pair<int, int>> split_sequences(int n_chains, int n_per_chain) {
  std::vector<std::pair<int, int>> seqs;
  const int half = n_per_chain / 2;
  for (int c = 0; c < n_chains; ++c) {
    const int base = c * n_per_chain;
    seqs.emplace_back(base, half);
    seqs.emplace_back(base + n_per_chain - half, half);
  }
  return seqs;
}

double split_rhat(const Eigen::VectorXd& x, const std::vector<std::pair<int, int>>& seqs) {
  const int m = static_cast<int>(seqs.size());
  const int n = seqs[0].second;
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd means(m), vars(m);
  for (int j = 0; j < m; ++j) {
    const auto seg = x.segment(seqs[static_cast<std::size_t>(j)].first, n);
    means[j] = seg.mean();
    vars[j] = (seg.array() - means[j]).square().sum() / (n - 1);
  }
  const double w = vars.mean();
  const double grand = means.mean();
  const double b = n * (means.array() - grand).square().sum() / std::max(1, m - 1);
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1.0) / n * w + b / n;
  // Values below 1 carry no information beyond "converged"; floor at 1.
  return std::max(1.0, std::sqrt(var_plus / w));
}

// Bulk ESS on rank-normalized draws with Geyer's initial monotone sequence.
double bulk_ess(const Eigen::VectorXd& x, const std::vector<std::pair<int, int>>& seqs) {
  const int m = static_cast<int>(seqs.size());
  const int n = seqs[0].second;
  const int total = m * n;
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();

  // Rank-normalize (average ranks for ties, then normal quantiles).
  std::vector<int> order(static_cast<std::size_t>(total));
  std::vector<double> pooled(static_cast<std::size_t>(total));
  {
    int k = 0;
    for (const auto& [off, len] : seqs) {
      for (int i = 0; i < len; ++i) pooled[static_cast<std::size_t>(k++)] = x[off + i];
    }
  }
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return pooled[static_cast<std::size_t>(a)] < pooled[static_cast<std::size_t>(b)]; });
  std::vector<double> z(static_cast<std::size_t>(total));
  {
    int i = 0;
    while (i < total) {
      int j = i;
      while (j + 1 < total && pooled[static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])] ==
                                  pooled[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]) {
        ++j;
      }
      const double avg_rank = 0.5 * (i + j) + 1.0;
      const double u = (avg_rank - 0.375) / (total + 0.25);
      for (int k = i; k <= j; ++k) {
        z[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = std_normal_quantile(u);
      }
      i = j + 1;
    }
  }
  if (std::all_of(pooled.begin(), pooled.end(),
                  [&](double v) { return v == pooled[0]; })) {
    return std::numeric_limits<double>::quiet_NaN();
  }

  // Per-sequence autocovariances on the rank-normalized scale.
  Eigen::MatrixXd seq(static_cast<Eigen::Index>(m), n);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < n; ++i) seq(j, i) = z[static_cast<std::size_t>(j * n + i)];
  }
  Eigen::VectorXd means(m), vars(m);
  for (int j = 0; j < m; ++j) {
    means[j] = seq.row(j).mean();
    vars[j] = (seq.row(j).array() - means[j]).square().sum() / (n - 1);
  }
  const double w = vars.mean();
  const double grand = means.mean();
  const double b = m > 1 ? n * (means.array() - grand).square().sum() / (m - 1) : 0.0;
  const double var_plus = (n - 1.0) / n * w + (m > 1 ? b / n : 0.0);
  if (var_plus <= 0.0) return std::numeric_limits<double>::quiet_NaN();

  auto acov = [&](int lag) {
    double acc = 0.0;
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int i = 0; i + lag < n; ++i) {
        s += (seq(j, i) - means[j]) * (seq(j, i + lag) - means[j]);
      }
      acc += s / n;
    }
    return acc / m;
  };

  double tau = 1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  double rho_prev = 1.0 - (w - acov(1)) / var_plus;
  for (int lag = 1; lag + 1 < n; lag += 2) {
    const double rho_even = lag == 1 ? rho_prev : 1.0 - (w - acov(lag)) / var_plus;
    const double rho_odd = 1.0 - (w - acov(lag + 1)) / var_plus;
    double pair = rho_even + rho_odd;
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);  // initial monotone sequence
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  const double ess = total / tau;
  return std::min(ess, static_cast<double>(total));
}

}  // namespace

Diagnostics diagnostics(const PosteriorDraws& d) {
  if (d.n_samples_per_chain < 100) {
    throw std::invalid_argument("diagnostics: need >= 100 draws per chain");
  }
  Diagnostics out;
  out.names = d.names;
  out.divergences = d.divergences;
  const auto seqs = split_sequences(d.n_chains, d.n_samples_per_chain);
  const int p = static_cast<int>(d.names.size());
  out.rhat.resize(static_cast<std::size_t>(p));
  out.ess.resize(static_cast<std::size_t>(p));
  for (int k = 0; k < p; ++k) {
    const Eigen::VectorXd col = d.draws.col(k);
    out.rhat[static_cast<std::size_t>(k)] =
        d.n_chains >= 2 ? split_rhat(col, seqs) : std::numeric_limits<double>::quiet_NaN();
    out.ess[static_cast<std::size_t>(k)] = bulk_ess(col, seqs);
  }
  const double total_transitions =
      static_cast<double>(d.n_chains) * std::max(1, d.n_samples_per_chain);
  if (d.divergences > 0.2 * total_transitions) {
    out.warnings.push_back("divergence rate above 20% (" + std::to_string(d.divergences) + "/" +
                           std::to_string(static_cast<long>(total_transitions)) +
                           " transitions); draws are unreliable");
  }
  if (d.n_chains < 2) {
    out.warnings.push_back("single chain: split-Rhat unavailable");
  }
  return out;
}

FitResult fit(const TrialDataset& data, const HyperPriors& hp, const SamplerConfig& cfg,
              ModelStructure structure) {
  if (data.n_clusters() < 2) {
    throw std::invalid_argument("fit: need at least 2 clusters");
  }
  if (structure.n_periods == 0) structure = ModelStructure::infer(data);
  const LaggedView view = observed_rows(data, false);
  bool any_y = false;
  for (const auto& r : view.rows) {
    if (structure.models_outcome(r.period)) {
      any_y = true;
      break;
    }
  }
  if (!any_y) throw std::invalid_argument("fit: no observed outcome rows in modeled periods");

  PosteriorTarget target(view, structure, hp);
  const TargetFn fn = [&target](const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
    return target.log_joint_grad(q, grad);
  };
  const int n_kept = cfg.store_latents ? target.dim() : target.n_param();
  std::vector<std::string> names = param_names(structure, cfg.store_latents);
  FitResult res;
  res.structure = structure;
  res.draws = run_hmc(fn, target.dim(), cfg, std::move(names), n_kept);
  res.diag = diagnostics(res.draws);
  return res;
}

void write_draws_csv(const PosteriorDraws& draws, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "draw,chain";
  for (const auto& n : draws.names) out << "," << n;
  out << "\n";
  for (int s = 0; s < draws.n_draws(); ++s) {
    out << s << "," << draws.chain[static_cast<std::size_t>(s)];
    for (int k = 0; k < draws.draws.cols(); ++k) {
      out << "," << format_double(draws.draws(s, k));
    }
    out << "\n";
  }
}

PosteriorDraws read_draws_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty draws file", 1);
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) header.push_back(f);
  }
  if (header.size() < 3 || header[0] != "draw" || header[1] != "chain") {
    throw ParseError("draws file must start with 'draw,chain,...'", 1);
  }
  PosteriorDraws d;
  d.names.assign(header.begin() + 2, header.end());
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f;
    std::vector<std::string> fields;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != header.size()) {
      throw ParseError("field count mismatch in draws file", lineno);
    }
    d.chain.push_back(std::stoi(fields[1]));
    std::vector<double> vals;
    for (std::size_t k = 2; k < fields.size(); ++k) {
      double v = 0.0;
      auto res = std::from_chars(fields[k].data(), fields[k].data() + fields[k].size(), v);
      if (res.ec != std::errc{}) throw ParseError("bad number in draws file", lineno);
      vals.push_back(v);
    }
    rows.push_back(std::move(vals));
  }
  d.draws.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d.names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      d.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  d.n_chains = d.chain.empty() ? 0 : *std::max_element(d.chain.begin(), d.chain.end());
  d.n_samples_per_chain = d.n_chains > 0 ? static_cast<int>(rows.size()) / d.n_chains : 0;
  return d;
}

}  // namespace swpce
