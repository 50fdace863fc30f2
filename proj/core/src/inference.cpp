#include "ldmix/inference.hpp"

#include "ldmix/math.hpp"
#include "ldmix/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ldmix {

namespace {

// A draw (or probe point) where the Laplace solve fails cannot be the
// maximizer we report, so it scores -inf rather than aborting the search.
double value_or_neg_inf(const MarginalPosterior& marginal, const ParameterSet& params) {
  try {
    const double v = marginal.value_params(params);
    return std::isfinite(v) ? v : neg_inf();
  } catch (const std::runtime_error&) {
    return neg_inf();
  }
}

// Objective shared by the MAP scan and polish: the marginal log posterior as
// a function of the unconstrained coordinates, without the change-of-variable
// Jacobian (the density being maximized lives on the constrained space).
double objective(const MarginalPosterior& marginal, const ModelConfig& config,
                 const Eigen::VectorXd& u) {
  return value_or_neg_inf(marginal, config.layout.constrain(u, config.gamma1));
}

}  // namespace

MapEstimate map_estimate(const PosteriorDraws& draws, const CohortData& cohort,
                         const ModelConfig& config, int polish_steps, int threads) {
  if (draws.chains.empty() || draws.chains.front().draws.rows() == 0)
    throw std::invalid_argument("map_estimate: no stored draws");

  const int chain = select_chain(draws);
  const Eigen::MatrixXd& rows = draws.chains[static_cast<std::size_t>(chain)].draws;
  const auto n = static_cast<int>(rows.rows());

  MarginalPosterior marginal(cohort, config, 1);
  Eigen::VectorXd lp(n);
  parallel_for(n, threads, [&](int i) {
    lp[i] = value_or_neg_inf(marginal, params_from_row(rows.row(i), config));
  });

  int best = 0;
  for (int i = 1; i < n; ++i)
    if (lp[i] > lp[best]) best = i;  // ties keep the first occurrence
  if (lp[best] == neg_inf())
    throw std::runtime_error("map_estimate: marginal posterior not finite at any draw");

  MapEstimate out;
  out.chain = chain;
  out.draw = best;
  out.params = params_from_row(rows.row(best), config);
  out.log_posterior = lp[best];

  if (polish_steps > 0) {
    Eigen::VectorXd u = config.layout.unconstrain(out.params);
    double cur = out.log_posterior;
    const int dim = config.layout.size();
    // Cycled coordinate-wise search: probe a fixed geometric grid of offsets
    // in both directions, then extend greedily while the objective improves.
    const double offsets[] = {0.25, 0.0625, 0.015625};
    for (int step = 0; step < polish_steps; ++step) {
      const int i = step % dim;
      double best_t = 0.0;
      double best_v = cur;
      for (double mag : offsets) {
        for (double sign : {1.0, -1.0}) {
          Eigen::VectorXd cand = u;
          cand[i] += sign * mag;
          const double v = objective(marginal, config, cand);
          if (v > best_v) {
            best_v = v;
            best_t = sign * mag;
          }
        }
      }
      if (best_t == 0.0) continue;
      u[i] += best_t;
      cur = best_v;
      for (int ext = 0; ext < 8; ++ext) {
        Eigen::VectorXd cand = u;
        cand[i] += best_t;
        const double v = objective(marginal, config, cand);
        if (!(v > cur)) break;
        u = cand;
        cur = v;
      }
      ++out.polish_steps;
    }
    if (cur > out.log_posterior) {
      out.params = config.layout.constrain(u, config.gamma1);
      out.log_posterior = cur;
    }
  }
  return out;
}

double bic_value(double map_log_posterior, int dim_psi, int n_subjects) {
  return -2.0 * map_log_posterior +
         static_cast<double>(dim_psi) * std::log(static_cast<double>(n_subjects));
}

ModelScore bic(const ParameterSet& map, const CohortData& cohort, const ModelConfig& config) {
  MarginalPosterior marginal(cohort, config, 1);
  ModelScore score;
  score.L = config.n_clusters;
  score.map_log_posterior = marginal.value_params(map);
  score.dim_psi = config.layout.size();
  score.bic = bic_value(score.map_log_posterior, score.dim_psi, cohort.n_subjects());
  return score;
}

int select_L(const std::vector<ModelScore>& scores) {
  if (scores.empty()) throw std::invalid_argument("select_L: no candidate scores");
  const ModelScore* best = &scores.front();
  for (const ModelScore& s : scores) {
    if (s.bic < best->bic || (s.bic == best->bic && s.L < best->L)) best = &s;
  }
  return best->L;
}

MembershipTable membership(const PosteriorDraws& draws, const CohortData& cohort,
                           const ModelConfig& config, int threads) {
  if (draws.chains.empty() || draws.chains.front().draws.rows() == 0)
    throw std::invalid_argument("membership: no stored draws");

  const int chain = select_chain(draws);
  const Eigen::MatrixXd& rows = draws.chains[static_cast<std::size_t>(chain)].draws;
  const auto n_draws = static_cast<int>(rows.rows());
  const int n = cohort.n_subjects();
  const int L = config.n_clusters;

  MarginalPosterior marginal(cohort, config, 1);
  // probs[d] is the n x L membership matrix for draw d; failed draws stay
  // empty and are skipped during aggregation.
  std::vector<Eigen::MatrixXd> probs(static_cast<std::size_t>(n_draws));
  std::vector<std::uint8_t> failed(static_cast<std::size_t>(n_draws), 0);
  parallel_for(n_draws, threads, [&](int d) {
    const ParameterSet params = params_from_row(rows.row(d), config);
    Eigen::MatrixXd lognorm;
    try {
      lognorm = marginal.subject_cluster_lognorm(params);
    } catch (const std::runtime_error&) {
      failed[static_cast<std::size_t>(d)] = 1;
      return;
    }
    Eigen::MatrixXd p(n, L);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd logw(L);
      for (int l = 0; l < L; ++l)
        logw[l] = std::log(params.structural.lambda[l]) + lognorm(i, l);
      const double norm = log_sum_exp(logw);
      for (int l = 0; l < L; ++l) p(i, l) = std::exp(logw[l] - norm);
    }
    probs[static_cast<std::size_t>(d)] = std::move(p);
  });

  MembershipTable table;
  table.ids.reserve(static_cast<std::size_t>(n));
  for (const Subject& s : cohort.subjects) table.ids.push_back(s.id);
  table.mean = Eigen::MatrixXd::Zero(n, L);
  table.lo = Eigen::MatrixXd::Zero(n, L);
  table.hi = Eigen::MatrixXd::Zero(n, L);
  table.assignment.assign(static_cast<std::size_t>(n), 0);

  for (int d = 0; d < n_draws; ++d) {
    if (failed[static_cast<std::size_t>(d)]) {
      ++table.draws_failed;
    } else {
      ++table.draws_used;
    }
  }
  if (table.draws_used == 0)
    throw std::runtime_error("membership: every draw failed its Laplace solve");

  std::vector<double> sample;
  sample.reserve(static_cast<std::size_t>(table.draws_used));
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < L; ++l) {
      sample.clear();
      for (int d = 0; d < n_draws; ++d) {
        if (failed[static_cast<std::size_t>(d)]) continue;
        sample.push_back(probs[static_cast<std::size_t>(d)](i, l));
      }
      double mean = 0.0;
      for (double v : sample) mean += v;
      table.mean(i, l) = mean / static_cast<double>(sample.size());
      table.lo(i, l) = empirical_quantile(sample, 0.025);
      table.hi(i, l) = empirical_quantile(sample, 0.975);
    }
    int arg = 0;
    for (int l = 1; l < L; ++l)
      if (table.mean(i, l) > table.mean(i, arg)) arg = l;
    table.assignment[static_cast<std::size_t>(i)] = arg;
  }
  return table;
}

ResilienceSummary resilience_summary(const PosteriorDraws& draws, const CohortData& cohort,
                                     const ModelConfig& config, bool in_years,
                                     const std::string& time_col) {
  const int L = config.n_clusters;
  if (L < 2) throw std::invalid_argument("resilience_summary: needs at least two clusters");
  if (draws.chains.empty() || draws.chains.front().draws.rows() == 0)
    throw std::invalid_argument("resilience_summary: no stored draws");

  int time_idx = -1;
  for (std::size_t j = 0; j < cohort.schema.z_cols.size(); ++j)
    if (cohort.schema.z_cols[j] == time_col) time_idx = static_cast<int>(j);
  if (time_idx < 0)
    throw std::invalid_argument("resilience_summary: structural covariate '" + time_col +
                                "' not in the cohort");

  const int chain = select_chain(draws);
  const Eigen::MatrixXd& rows = draws.chains[static_cast<std::size_t>(chain)].draws;
  const auto n_draws = static_cast<int>(rows.rows());
  const ParameterLayout& layout = config.layout;

  ResilienceSummary out;
  out.in_years = in_years;
  out.years_per_unit = cohort.standardization.age_sd;
  const double scale = in_years ? out.years_per_unit : 1.0;

  // Reported rows store alpha_t at its alpha slot and the alpha0 thresholds
  // for clusters 2..L in the eta slots.
  std::vector<double> alpha_t(static_cast<std::size_t>(n_draws));
  for (int d = 0; d < n_draws; ++d)
    alpha_t[static_cast<std::size_t>(d)] = rows(d, layout.alpha_offset() + time_idx);
  const double at_lo = empirical_quantile(alpha_t, 0.025);
  const double at_hi = empirical_quantile(alpha_t, 0.975);
  out.alpha_t_unstable = at_lo <= 0.0 && at_hi >= 0.0;

  out.clusters.reserve(static_cast<std::size_t>(L - 1));
  out.mean.resize(L - 1);
  out.lo.resize(L - 1);
  out.hi.resize(L - 1);
  std::vector<double> ratio(static_cast<std::size_t>(n_draws));
  for (int l = 2; l <= L; ++l) {
    for (int d = 0; d < n_draws; ++d) {
      const double a0 = rows(d, layout.eta_offset() + (l - 2));
      ratio[static_cast<std::size_t>(d)] = scale * a0 / alpha_t[static_cast<std::size_t>(d)];
    }
    double mean = 0.0;
    for (double v : ratio) mean += v;
    out.clusters.push_back(l);
    out.mean[l - 2] = mean / static_cast<double>(n_draws);
    out.lo[l - 2] = empirical_quantile(ratio, 0.025);
    out.hi[l - 2] = empirical_quantile(ratio, 0.975);
  }
  return out;
}

}  // namespace ldmix
