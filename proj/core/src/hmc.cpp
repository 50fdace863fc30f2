#include "ldmix/hmc.hpp"

#include "ldmix/math.hpp"
#include "ldmix/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ldmix {

namespace {

double kinetic(const Eigen::VectorXd& p, const Eigen::VectorXd& inv_mass) {
  return 0.5 * p.cwiseProduct(p).dot(inv_mass);
}

/// Nesterov dual averaging of log(step size), Stan's constants.
struct DualAveraging {
  double mu = 0.0, log_eps = 0.0, log_eps_bar = 0.0, h_bar = 0.0;
  int m = 0;
  static constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;

  void init(double eps0) {
    mu = std::log(10.0 * eps0);
    log_eps = std::log(eps0);
    log_eps_bar = std::log(eps0);
    h_bar = 0.0;
    m = 0;
  }
  void update(double accept_prob, double target) {
    ++m;
    const double md = static_cast<double>(m);
    h_bar = (1.0 - 1.0 / (md + t0)) * h_bar + (target - accept_prob) / (md + t0);
    log_eps = mu - std::sqrt(md) / gamma * h_bar;
    const double w = std::pow(md, -kappa);
    log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
  }
  double current() const { return std::exp(log_eps); }
  double averaged() const { return std::exp(log_eps_bar); }
};

/// Diagonal variance accumulator for mass-matrix windows.
struct VarAccum {
  Eigen::VectorXd mean, m2;
  long n = 0;
  void reset(Eigen::Index d) {
    mean.setZero(d);
    m2.setZero(d);
    n = 0;
  }
  void add(const Eigen::VectorXd& x) {
    ++n;
    const Eigen::VectorXd d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d.cwiseProduct(x - mean);
  }
  /// Regularized sample variance, shrunk toward 1e-3 at small counts.
  Eigen::VectorXd regularized() const {
    const double nd = static_cast<double>(n);
    Eigen::VectorXd var = m2 / std::max(1.0, nd - 1.0);
    return (nd / (nd + 5.0)) * var.array() + 1e-3 * (5.0 / (nd + 5.0));
  }
};

double find_reasonable_epsilon(const HmcTarget& target, const Eigen::VectorXd& u, double value,
                               const Eigen::VectorXd& grad, const Eigen::VectorXd& inv_mass,
                               Rng& rng) {
  Eigen::VectorXd p(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) p[i] = rng.normal() / std::sqrt(inv_mass[i]);
  const double h0 = -value + kinetic(p, inv_mass);

  double eps = 1.0;
  auto log_accept = [&](double e) {
    LeapfrogResult lf = leapfrog(target, u, p, e, 1, inv_mass);
    if (!lf.finite) return neg_inf();
    return h0 - (-lf.value + kinetic(lf.p, inv_mass));
  };
  (void)grad;
  double la = log_accept(eps);
  const double log_half = -0.6931471805599453;
  const int dir = la > log_half ? 1 : -1;
  for (int it = 0; it < 100; ++it) {
    if (dir == 1 && !(la > log_half)) break;
    if (dir == -1 && !(la < log_half)) break;
    eps *= dir == 1 ? 2.0 : 0.5;
    if (eps > 1e2 || eps < 1e-10) break;
    la = log_accept(eps);
  }
  return std::clamp(eps, 1e-10, 1e2);
}

}  // namespace

LeapfrogResult leapfrog(const HmcTarget& target, const Eigen::VectorXd& u0, const Eigen::VectorXd& p0,
                        double step, int n_steps, const Eigen::VectorXd& inv_mass) {
  if (u0.size() != inv_mass.size() || p0.size() != u0.size())
    throw std::invalid_argument("leapfrog: dimension mismatch");
  LeapfrogResult out;
  out.u = u0;
  out.p = p0;
  out.grad.resize(u0.size());

  double value = target.value_and_grad(out.u, out.grad);
  const double h0 = -value + kinetic(out.p, inv_mass);
  if (!std::isfinite(h0)) {
    out.finite = false;
    out.value = value;
    out.energy_error = quiet_nan();
    return out;
  }

  for (int s = 0; s < n_steps; ++s) {
    out.p += 0.5 * step * out.grad;
    out.u += step * inv_mass.cwiseProduct(out.p);
    value = target.value_and_grad(out.u, out.grad);
    if (!std::isfinite(value) || !out.grad.allFinite()) {
      out.finite = false;
      out.value = value;
      out.energy_error = quiet_nan();
      return out;
    }
    out.p += 0.5 * step * out.grad;
  }
  out.value = value;
  const double h1 = -value + kinetic(out.p, inv_mass);
  out.energy_error = h1 - h0;
  out.finite = std::isfinite(out.energy_error);
  return out;
}

ChainResult run_hmc(const HmcTarget& target, const SamplerConfig& config, Rng rng,
                    const Eigen::VectorXd& init,
                    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& report) {
  const Eigen::Index d = target.dim;
  if (init.size() != d) throw std::invalid_argument("run_hmc: init has wrong dimension");

  Eigen::VectorXd u = init;
  Eigen::VectorXd grad(d);
  double value = target.value_and_grad(u, grad);
  if (!std::isfinite(value)) throw std::runtime_error("run_hmc: initial point has non-finite density");

  Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(d);
  DualAveraging da;
  da.init(find_reasonable_epsilon(target, u, value, grad, inv_mass, rng));

  // Warmup windows: fast step-size buffer, doubling mass windows, final
  // step-size buffer (roughly 15% / 75% / 10%).
  const int warmup = config.warmup;
  const int init_buf = std::max(1, static_cast<int>(0.15 * warmup));
  const int term_buf = std::max(1, static_cast<int>(0.10 * warmup));
  std::vector<int> window_ends;
  {
    int start = init_buf, w = 25;
    while (start < warmup - term_buf) {
      int end = start + w;
      if (end + 2 * w > warmup - term_buf) end = warmup - term_buf;  // absorb remainder
      window_ends.push_back(end);
      start = end;
      w *= 2;
    }
  }
  VarAccum acc;
  acc.reset(d);
  std::size_t window_ix = 0;

  const Eigen::VectorXd first_row = report ? report(u) : u;
  const Eigen::Index n_report = first_row.size();
  ChainResult out;
  out.draws.resize(config.draws, n_report);
  out.lp.resize(config.draws);
  out.divergent.assign(static_cast<std::size_t>(config.draws), 0);

  double eps_final = da.averaged();
  double accept_sum = 0.0;
  Eigen::VectorXd p(d);

  for (int it = 0; it < warmup + config.draws; ++it) {
    const bool sampling = it >= warmup;
    const double eps = sampling ? eps_final : da.current();
    const int base = std::clamp(static_cast<int>(std::lround(config.path_length / eps)), 1,
                                config.max_leapfrog);
    const double jitter = 0.8 + 0.4 * rng.uniform();
    const int n_steps = std::clamp(static_cast<int>(std::lround(base * jitter)), 1, config.max_leapfrog);

    for (Eigen::Index i = 0; i < d; ++i) p[i] = rng.normal() / std::sqrt(inv_mass[i]);
    const LeapfrogResult lf = leapfrog(target, u, p, eps, n_steps, inv_mass);

    const bool divergent = !lf.finite || std::abs(lf.energy_error) > 1000.0;
    const double alpha = divergent ? 0.0 : std::min(1.0, std::exp(-lf.energy_error));
    if (!divergent && rng.uniform() < alpha) {
      u = lf.u;
      value = lf.value;
      grad = lf.grad;
    }

    if (!sampling) {
      da.update(alpha, config.target_accept);
      const bool in_mass_phase = it >= init_buf && window_ix < window_ends.size();
      if (in_mass_phase) {
        acc.add(u);
        if (it + 1 == window_ends[window_ix]) {
          inv_mass = acc.regularized();
          acc.reset(d);
          ++window_ix;
          da.init(find_reasonable_epsilon(target, u, value, grad, inv_mass, rng));
        }
      }
      if (it + 1 == warmup) eps_final = da.averaged();
    } else {
      const int ix = it - warmup;
      out.draws.row(ix) = report ? report(u).transpose() : u.transpose();
      out.lp[ix] = value;
      out.divergent[static_cast<std::size_t>(ix)] = divergent ? 1 : 0;
      out.n_divergences += divergent ? 1 : 0;
      accept_sum += alpha;
    }
  }

  out.accept_rate = config.draws > 0 ? accept_sum / config.draws : 0.0;
  out.step_size = eps_final;
  out.inv_mass = inv_mass;
  out.last_u = u;
  return out;
}

PosteriorDraws run_chains(const CohortData& cohort, const ModelConfig& config,
                          const SamplerConfig& sampler) {
  const int chains = std::max(1, sampler.chains);
  const int chain_workers = std::min(chains, std::max(1, sampler.threads));
  const int inner_threads = std::max(1, sampler.threads / chain_workers);

  const JointPosterior posterior(cohort, config, inner_threads);
  const ParameterLayout& layout = config.layout;
  const int n_par = layout.size();
  const int latent_dim = posterior.dim() - n_par;

  PosteriorDraws out;
  out.chains.resize(static_cast<std::size_t>(chains));
  out.names = layout.parameter_names(config.type_slot_names);
  out.n_clusters = config.n_clusters;

  parallel_for(chains, chain_workers, [&](int c) {
    Rng rng(sampler.seed, static_cast<std::uint64_t>(c));

    HmcTarget target;
    target.dim = posterior.dim();
    target.value_and_grad = [&posterior](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
      return posterior.value_and_grad(u, g);
    };

    // Jittered initialization; retry at shrinking scale if out of support.
    Eigen::VectorXd init(posterior.dim());
    double scale = sampler.init_jitter;
    for (int attempt = 0; attempt < 20; ++attempt) {
      for (int i = 0; i < n_par; ++i) init[i] = rng.uniform(-scale, scale);
      for (int i = 0; i < latent_dim; ++i) init[n_par + i] = 0.2 * scale * rng.normal();
      if (std::isfinite(posterior.value(init))) break;
      scale *= 0.5;
    }

    auto report = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
      const Eigen::VectorXd values = layout.constrained_values(posterior.params_of(u));
      if (!sampler.store_latent) return values;
      Eigen::VectorXd both(values.size() + latent_dim);
      both << values, u.tail(latent_dim);
      return both;
    };
    ChainResult res = run_hmc(target, sampler, rng.split(0x9e3779b9), init, report);
    if (sampler.store_latent) {
      res.latent = res.draws.rightCols(latent_dim);
      res.draws = Eigen::MatrixXd(res.draws.leftCols(layout.size()));
    }
    out.chains[static_cast<std::size_t>(c)] = std::move(res);
  });

  out.rhat = split_rhat(out.chains);
  out.ess = effective_sample_size(out.chains);
  return out;
}

Eigen::VectorXd split_rhat(const std::vector<ChainResult>& chains) {
  if (chains.empty()) return {};
  const Eigen::Index n_col = chains.front().draws.cols();
  const Eigen::Index n = chains.front().draws.rows();
  const Eigen::Index half = n / 2;
  Eigen::VectorXd rhat(n_col);
  if (half < 2) {
    rhat.setConstant(quiet_nan());
    return rhat;
  }

  for (Eigen::Index c = 0; c < n_col; ++c) {
    std::vector<double> means, vars;
    for (const auto& ch : chains) {
      for (int s = 0; s < 2; ++s) {
        RunningMoments rm;
        for (Eigen::Index i = 0; i < half; ++i) rm.add(ch.draws(s * half + i, c));
        means.push_back(rm.mean());
        vars.push_back(rm.variance());
      }
    }
    RunningMoments across;
    for (double m : means) across.add(m);
    const double b = static_cast<double>(half) * across.variance();
    double w = 0.0;
    for (double v : vars) w += v;
    w /= static_cast<double>(vars.size());
    if (w <= 0.0) {
      rhat[c] = 1.0;
      continue;
    }
    const double nh = static_cast<double>(half);
    rhat[c] = std::sqrt(((nh - 1.0) / nh * w + b / nh) / w);
  }
  return rhat;
}

Eigen::VectorXd effective_sample_size(const std::vector<ChainResult>& chains) {
  if (chains.empty()) return {};
  const Eigen::Index n_col = chains.front().draws.cols();
  const Eigen::Index n = chains.front().draws.rows();
  const Eigen::Index half = n / 2;
  Eigen::VectorXd ess(n_col);
  if (half < 4) {
    ess.setConstant(quiet_nan());
    return ess;
  }

  // Split each chain; combine autocovariances Stan-style.
  std::vector<Eigen::VectorXd> seqs(2 * chains.size());
  const auto n_seq = static_cast<double>(seqs.size());

  for (Eigen::Index c = 0; c < n_col; ++c) {
    std::size_t six = 0;
    for (const auto& ch : chains)
      for (int s = 0; s < 2; ++s) seqs[six++] = ch.draws.col(c).segment(s * half, half);

    double w = 0.0;
    RunningMoments across;
    for (const auto& q : seqs) {
      RunningMoments rm;
      for (Eigen::Index i = 0; i < half; ++i) rm.add(q[i]);
      w += rm.variance();
      across.add(rm.mean());
    }
    w /= n_seq;
    const double var_plus = w * (static_cast<double>(half) - 1.0) / static_cast<double>(half) +
                            across.variance();
    if (!(var_plus > 0.0)) {
      ess[c] = quiet_nan();
      continue;
    }

    auto autocov = [&](const Eigen::VectorXd& q, Eigen::Index lag) {
      const Eigen::Index m = q.size();
      const double mean = q.mean();
      double s = 0.0;
      for (Eigen::Index i = 0; i + lag < m; ++i) s += (q[i] - mean) * (q[i + lag] - mean);
      return s / static_cast<double>(m);
    };

    // Geyer initial positive sequence over paired autocorrelations.
    double tau = 1.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (Eigen::Index lag = 1; lag + 1 < half; lag += 2) {
      double rho_a = 0.0, rho_b = 0.0;
      for (const auto& q : seqs) {
        rho_a += autocov(q, lag);
        rho_b += autocov(q, lag + 1);
      }
      rho_a = 1.0 - (w - rho_a / n_seq) / var_plus;
      rho_b = 1.0 - (w - rho_b / n_seq) / var_plus;
      double pair = rho_a + rho_b;
      if (pair < 0.0) break;
      pair = std::min(pair, prev_pair);  // enforce monotone decrease
      prev_pair = pair;
      tau += 2.0 * pair;
    }
    ess[c] = n_seq * static_cast<double>(half) / tau;
  }
  return ess;
}

int select_chain(const PosteriorDraws& draws, std::string* reason) {
  if (draws.chains.empty()) throw std::invalid_argument("select_chain: no chains");
  const int L = draws.n_clusters;

  // Posterior-mean lambda per chain (lambda_L implied by the free ones).
  std::vector<int> lambda_cols;
  for (std::size_t i = 0; i < draws.names.size(); ++i)
    if (draws.names[i].rfind("lambda.", 0) == 0) lambda_cols.push_back(static_cast<int>(i));

  auto degenerate = [&](const ChainResult& ch) {
    if (L == 1 || lambda_cols.empty()) return false;
    double rest = 1.0;
    for (int col : lambda_cols) {
      const double m = ch.draws.col(col).mean();
      rest -= m;
      if (m < 0.01) return true;
    }
    return rest < 0.01;
  };
  auto mean_lp = [](const ChainResult& ch) { return ch.lp.mean(); };

  std::vector<int> candidates(draws.chains.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i] = static_cast<int>(i);

  std::vector<int> no_div;
  for (int c : candidates)
    if (draws.chains[static_cast<std::size_t>(c)].n_divergences == 0) no_div.push_back(c);
  std::string why = "highest mean log posterior";
  if (!no_div.empty() && no_div.size() < candidates.size()) {
    candidates = no_div;
    why = "divergence-free, then " + why;
  }
  std::vector<int> clean;
  for (int c : candidates)
    if (!degenerate(draws.chains[static_cast<std::size_t>(c)])) clean.push_back(c);
  if (!clean.empty() && clean.size() < candidates.size()) {
    candidates = clean;
    why = "non-degenerate, then " + why;
  }

  int best = candidates.front();
  for (int c : candidates)
    if (mean_lp(draws.chains[static_cast<std::size_t>(c)]) >
        mean_lp(draws.chains[static_cast<std::size_t>(best)]))
      best = c;
  if (reason) *reason = why;
  return best;
}

ParameterSet params_from_row(const Eigen::VectorXd& row, const ModelConfig& config) {
  const ParameterLayout& layout = config.layout;
  if (row.size() != layout.size()) throw std::invalid_argument("params_from_row: wrong row length");
  const int K = layout.n_markers(), p = layout.n_xcov(), q = layout.n_zcov(), L = layout.n_clusters();

  ParameterSet ps;
  auto& m = ps.measurement;
  auto& s = ps.structural;
  m.beta.resize(K, p);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < p; ++j) m.beta(k, j) = row[layout.beta_offset() + k * p + j];
  m.gamma1 = config.gamma1;
  m.gamma2 = row.segment(layout.gamma2_offset(), K);
  m.gamma3 = row.segment(layout.gamma3_offset(), K);
  m.mu_type = row.segment(layout.mu_offset(), layout.n_types());
  m.sigma.resize(L, K);
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < K; ++k) m.sigma(l, k) = row[layout.sigma_offset() + l * K + k];
  s.alpha = row.segment(layout.alpha_offset(), q);
  s.alpha0.setZero(L);
  for (int l = 1; l < L; ++l) s.alpha0[l] = row[layout.eta_offset() + (l - 1)];
  s.rho = row.segment(layout.rho_offset(), L);
  s.lambda.resize(L);
  if (L == 1) {
    s.lambda[0] = 1.0;
  } else {
    double rest = 1.0;
    for (int l = 0; l + 1 < L; ++l) {
      s.lambda[l] = row[layout.lambda_offset() + l];
      rest -= s.lambda[l];
    }
    s.lambda[L - 1] = rest;
  }
  return ps;
}

}  // namespace ldmix
