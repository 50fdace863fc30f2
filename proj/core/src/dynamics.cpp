#include "ldmix/dynamics.hpp"

#include "ldmix/laplace.hpp"
#include "ldmix/math.hpp"
#include "ldmix/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace ldmix {

Eigen::VectorXd cluster_probability(const Subject& subject, int history_len,
                                    const ParameterSet& params, const ModelConfig& config,
                                    const CensoringSpec& censoring) {
  const int L = config.n_clusters;
  if (history_len < 0 || history_len > subject.n_visits())
    throw std::invalid_argument("cluster_probability: history length out of range for subject " +
                                subject.id);
  if (history_len == 0) return params.structural.lambda;  // no data: the prior weights

  Eigen::VectorXd logw(L);
  for (int l = 0; l < L; ++l) {
    LaplaceProblem prob =
        make_laplace_problem(subject, history_len, Eigen::VectorXd(),
                             Eigen::MatrixXd(0, subject.z.cols()), l, params.measurement,
                             params.structural, censoring);
    LaplaceResult res;
    try {
      res = laplace_approximate(prob);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("cluster_probability: subject " + subject.id + ", cluster " +
                               std::to_string(l + 1) + ", j=" + std::to_string(history_len) +
                               ": " + e.what());
    }
    if (!res.converged)
      throw std::runtime_error("cluster_probability: Laplace did not converge for subject " +
                               subject.id + ", cluster " + std::to_string(l + 1) +
                               ", j=" + std::to_string(history_len));
    logw[l] = std::log(params.structural.lambda[l]) + res.log_normalizer;
  }
  const double norm = log_sum_exp(logw);
  Eigen::VectorXd p(L);
  for (int l = 0; l < L; ++l) p[l] = std::exp(logw[l] - norm);
  return p;
}

ClusterTrajectory cluster_trajectory(const Subject& subject, const PosteriorDraws& draws,
                                     const ModelConfig& config, const CensoringSpec& censoring,
                                     int thin, int threads) {
  if (draws.chains.empty() || draws.chains.front().draws.rows() == 0)
    throw std::invalid_argument("cluster_trajectory: no stored draws");
  if (thin < 1) throw std::invalid_argument("cluster_trajectory: thin must be >= 1");

  const int chain = select_chain(draws);
  const Eigen::MatrixXd& rows = draws.chains[static_cast<std::size_t>(chain)].draws;
  std::vector<int> kept;
  for (int d = 0; d < static_cast<int>(rows.rows()); d += thin) kept.push_back(d);

  const int J = subject.n_visits();
  const int L = config.n_clusters;
  const auto n_kept = static_cast<int>(kept.size());
  // slot[d] holds the J x L probability block for draw d; empty on failure.
  std::vector<Eigen::MatrixXd> slot(static_cast<std::size_t>(n_kept));
  std::vector<std::uint8_t> failed(static_cast<std::size_t>(n_kept), 0);
  parallel_for(n_kept, threads, [&](int d) {
    const ParameterSet params = params_from_row(rows.row(kept[static_cast<std::size_t>(d)]), config);
    Eigen::MatrixXd block(J, L);
    try {
      for (int j = 1; j <= J; ++j)
        block.row(j - 1) = cluster_probability(subject, j, params, config, censoring).transpose();
    } catch (const std::runtime_error&) {
      failed[static_cast<std::size_t>(d)] = 1;
      return;
    }
    slot[static_cast<std::size_t>(d)] = std::move(block);
  });

  ClusterTrajectory out;
  for (int d = 0; d < n_kept; ++d) {
    if (failed[static_cast<std::size_t>(d)])
      ++out.draws_failed;
    else
      ++out.draws_used;
  }
  if (out.draws_used == 0)
    throw std::runtime_error("cluster_trajectory: every draw failed for subject " + subject.id);

  out.history_len.resize(static_cast<std::size_t>(J));
  out.probs.assign(static_cast<std::size_t>(J), Eigen::MatrixXd(out.draws_used, L));
  for (int j = 0; j < J; ++j) {
    out.history_len[static_cast<std::size_t>(j)] = j + 1;
    int r = 0;
    for (int d = 0; d < n_kept; ++d) {
      if (failed[static_cast<std::size_t>(d)]) continue;
      out.probs[static_cast<std::size_t>(j)].row(r++) = slot[static_cast<std::size_t>(d)].row(j);
    }
  }
  return out;
}

Horizon default_horizon(const Subject& subject, int history_len, const Eigen::VectorXd& times,
                        const CohortSchema& schema) {
  const auto n_h = times.size();
  Horizon h;
  h.times = times;
  h.x.resize(n_h, static_cast<Eigen::Index>(schema.x_cols.size()));
  h.z.resize(n_h, static_cast<Eigen::Index>(schema.z_cols.size()));
  const int last = history_len - 1;
  auto fill = [&](Eigen::MatrixXd& m, const std::vector<std::string>& cols,
                  const Eigen::MatrixXd& observed_rows) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (cols[c] == "intercept")
        m.col(ci).setOnes();
      else if (cols[c] == "time")
        m.col(ci) = times;
      else if (last >= 0)
        m.col(ci).setConstant(observed_rows(last, ci));
      else
        m.col(ci).setZero();
    }
  };
  fill(h.x, schema.x_cols, subject.x);
  fill(h.z, schema.z_cols, subject.z);
  return h;
}

TrajectoryDraws predict_trajectory(const Subject& subject, int history_len, const Horizon& horizon,
                                   const ParameterSet& params, const ModelConfig& config,
                                   const CensoringSpec& censoring, int n_draws, Rng& rng) {
  const int L = config.n_clusters;
  const auto n_h = horizon.times.size();
  if (n_h > 0 && history_len > 0 && !(horizon.times[0] > subject.times[history_len - 1]))
    throw std::invalid_argument("predict_trajectory: horizon begins before the history ends");

  TrajectoryDraws out;
  out.times = horizon.times;
  out.q_hat = cluster_probability(subject, history_len, params, config, censoring);
  if (n_h == 0 || n_draws <= 0) return out;

  // Drawing the label first and realizing only that cluster's trajectory is
  // distributionally identical to realizing every cluster and then selecting
  // by the multinomial draw; it just skips the unused Laplace solves.
  std::vector<std::optional<LaplaceResult>> lap(static_cast<std::size_t>(L));
  const int K = params.measurement.n_markers();
  out.y.reserve(static_cast<std::size_t>(n_draws));
  out.cluster.reserve(static_cast<std::size_t>(n_draws));
  for (int r = 0; r < n_draws; ++r) {
    const int c = rng.categorical(out.q_hat);
    auto& cached = lap[static_cast<std::size_t>(c)];
    if (!cached) {
      const LaplaceProblem prob =
          make_laplace_problem(subject, history_len, horizon.times, horizon.z, c,
                               params.measurement, params.structural, censoring);
      cached = laplace_approximate(prob);
      if (!cached->converged)
        throw std::runtime_error("predict_trajectory: Laplace did not converge for subject " +
                                 subject.id + ", cluster " + std::to_string(c + 1));
    }
    const Eigen::VectorXd theta = mvn_sample(cached->mode, cached->cov, rng);
    const Eigen::VectorXd g_fut =
        (horizon.z * params.structural.alpha).array() - params.structural.alpha0[c];
    Eigen::MatrixXd y(n_h, K);
    for (Eigen::Index s = 0; s < n_h; ++s) {
      const double d = g_fut[s] + theta[history_len + s];
      for (int k = 0; k < K; ++k) {
        const double mu = biomarker_mean(horizon.x.row(s), d, k, params.measurement);
        double v = mu + params.measurement.sigma(c, k) * rng.normal();
        const CensorRule& rule = censoring.rule(k);
        if (rule.side == CensorSide::ceiling)
          v = std::min(v, rule.bound);
        else if (rule.side == CensorSide::floor)
          v = std::max(v, rule.bound);
        y(s, k) = v;
      }
    }
    out.y.push_back(std::move(y));
    out.cluster.push_back(c);
  }
  return out;
}

TrajectoryDraws predict_over_draws(const Subject& subject, int history_len, const Horizon& horizon,
                                   const PosteriorDraws& draws, const ModelConfig& config,
                                   const CensoringSpec& censoring, int draws_per_psi, Rng& rng,
                                   int thin) {
  if (draws.chains.empty() || draws.chains.front().draws.rows() == 0)
    throw std::invalid_argument("predict_over_draws: no stored draws");
  if (thin < 1) throw std::invalid_argument("predict_over_draws: thin must be >= 1");

  const int chain = select_chain(draws);
  const Eigen::MatrixXd& rows = draws.chains[static_cast<std::size_t>(chain)].draws;

  TrajectoryDraws out;
  out.times = horizon.times;
  out.q_hat = Eigen::VectorXd::Zero(config.n_clusters);
  int used = 0;
  for (int d = 0; d < static_cast<int>(rows.rows()); d += thin) {
    const ParameterSet params = params_from_row(rows.row(d), config);
    TrajectoryDraws one;
    try {
      one = predict_trajectory(subject, history_len, horizon, params, config, censoring,
                               draws_per_psi, rng);
    } catch (const std::runtime_error&) {
      ++out.psi_draws_failed;
      continue;
    }
    out.q_hat += one.q_hat;
    ++used;
    for (auto& y : one.y) out.y.push_back(std::move(y));
    out.cluster.insert(out.cluster.end(), one.cluster.begin(), one.cluster.end());
  }
  if (used == 0)
    throw std::runtime_error("predict_over_draws: every parameter draw failed for subject " +
                             subject.id);
  out.q_hat /= static_cast<double>(used);
  return out;
}

TrajectorySummary summarize_trajectory(const TrajectoryDraws& draws) {
  TrajectorySummary s;
  s.times = draws.times;
  const auto n_h = draws.times.size();
  if (draws.y.empty()) {
    s.mean.resize(n_h, 0);
    s.lo.resize(n_h, 0);
    s.hi.resize(n_h, 0);
    return s;
  }
  const auto K = draws.y.front().cols();
  s.mean.resize(n_h, K);
  s.lo.resize(n_h, K);
  s.hi.resize(n_h, K);
  std::vector<double> sample(draws.y.size());
  for (Eigen::Index t = 0; t < n_h; ++t) {
    for (Eigen::Index k = 0; k < K; ++k) {
      double mean = 0.0;
      for (std::size_t r = 0; r < draws.y.size(); ++r) {
        sample[r] = draws.y[r](t, k);
        mean += sample[r];
      }
      s.mean(t, k) = mean / static_cast<double>(sample.size());
      s.lo(t, k) = empirical_quantile(sample, 0.025);
      s.hi(t, k) = empirical_quantile(sample, 0.975);
    }
  }
  return s;
}

void bin_records(PredictiveSummary& summary, double bin_width) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("bin_records: bin width must be positive");
  summary.n_predictions = static_cast<int>(summary.records.size());
  if (summary.records.empty()) {
    summary.bin_lo.resize(0);
    summary.bin_hi.resize(0);
    summary.bin_n.resize(0);
    summary.mae.resize(0);
    summary.coverage.resize(0);
    summary.overall_mae = 0.0;
    summary.overall_coverage = 0.0;
    return;
  }
  double age_min = summary.records.front().age;
  double age_max = age_min;
  for (const auto& r : summary.records) {
    age_min = std::min(age_min, r.age);
    age_max = std::max(age_max, r.age);
  }
  const double lo = std::floor(age_min / bin_width) * bin_width;
  const int n_bins = std::max(1, static_cast<int>(std::floor((age_max - lo) / bin_width)) + 1);

  summary.bin_lo.resize(n_bins);
  summary.bin_hi.resize(n_bins);
  summary.bin_n = Eigen::VectorXi::Zero(n_bins);
  Eigen::VectorXd abs_err = Eigen::VectorXd::Zero(n_bins);
  Eigen::VectorXd covered = Eigen::VectorXd::Zero(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    summary.bin_lo[b] = lo + b * bin_width;
    summary.bin_hi[b] = lo + (b + 1) * bin_width;
  }
  double total_err = 0.0, total_cov = 0.0;
  for (const auto& r : summary.records) {
    int b = static_cast<int>(std::floor((r.age - lo) / bin_width));
    b = std::clamp(b, 0, n_bins - 1);
    summary.bin_n[b] += 1;
    abs_err[b] += std::abs(r.mean - r.observed);
    covered[b] += r.covered ? 1.0 : 0.0;
    total_err += std::abs(r.mean - r.observed);
    total_cov += r.covered ? 1.0 : 0.0;
  }
  summary.mae.resize(n_bins);
  summary.coverage.resize(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    const double n = summary.bin_n[b];
    summary.mae[b] = n > 0 ? abs_err[b] / n : quiet_nan();
    summary.coverage[b] = n > 0 ? covered[b] / n : quiet_nan();
  }
  const auto n_total = static_cast<double>(summary.records.size());
  summary.overall_mae = total_err / n_total;
  summary.overall_coverage = total_cov / n_total;
}

PredictiveSummary evaluate_cv(const CohortData& cohort, const ModelConfig& config,
                              const CvConfig& cv) {
  const int n = cohort.n_subjects();
  if (cv.folds < 2) throw std::invalid_argument("evaluate_cv: needs at least two folds");
  if (n < cv.folds) throw std::invalid_argument("evaluate_cv: fewer subjects than folds");

  // Seeded shuffle, then round-robin fold labels over the shuffled order.
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng shuffle_rng(cv.seed, 0xCF);
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(shuffle_rng.integer(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) fold_of[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i % cv.folds;

  PredictiveSummary summary;
  for (int f = 0; f < cv.folds; ++f) {
    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < n; ++i) {
      if (fold_of[static_cast<std::size_t>(i)] == f)
        test_idx.push_back(i);
      else
        train_idx.push_back(i);
    }
    const CohortData train = subset_cohort(cohort, train_idx);
    const ModelConfig train_config =
        make_model_config(train, config.n_clusters, config.gamma1, config.prior);

    SamplerConfig sampler = cv.sampler;
    sampler.seed = cv.sampler.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(f + 1);
    sampler.threads = cv.threads;
    const PosteriorDraws fit = run_chains(train, train_config, sampler);

    MapEstimate map;
    if (cv.map_only) map = map_estimate(fit, train, train_config, cv.map_polish, cv.threads);

    const auto n_test = static_cast<int>(test_idx.size());
    std::vector<std::vector<PredictionRecord>> slot(static_cast<std::size_t>(n_test));
    std::vector<int> failures(static_cast<std::size_t>(n_test), 0);
    parallel_for(n_test, cv.threads, [&](int ti) {
      const int orig = test_idx[static_cast<std::size_t>(ti)];
      const Subject& s = cohort.subjects[static_cast<std::size_t>(orig)];
      Rng rng(cv.seed, 0xE0000000ULL + (static_cast<std::uint64_t>(f) << 20) +
                           static_cast<std::uint64_t>(orig));
      auto& recs = slot[static_cast<std::size_t>(ti)];
      for (int j = 1; j < s.n_visits(); ++j) {
        Horizon h;
        h.times = s.times.segment(j, 1);
        h.x = s.x.row(j);
        h.z = s.z.row(j);
        TrajectoryDraws traj;
        if (cv.map_only) {
          traj = predict_trajectory(s, j, h, map.params, train_config, cohort.censoring,
                                    cv.predictive_draws, rng);
        } else {
          traj = predict_over_draws(s, j, h, fit, train_config, cohort.censoring,
                                    cv.predictive_draws, rng, cv.thin);
          failures[static_cast<std::size_t>(ti)] += traj.psi_draws_failed;
        }
        std::vector<double> sample(traj.y.size());
        for (int k = 0; k < cohort.n_markers; ++k) {
          if (!s.observed(j, k)) continue;
          for (std::size_t r = 0; r < traj.y.size(); ++r) sample[r] = traj.y[r](0, k);
          PredictionRecord rec;
          rec.id = s.id;
          rec.age = s.ages[j];
          rec.marker = k;
          rec.observed = s.y(j, k);
          double mean = 0.0;
          for (double v : sample) mean += v;
          rec.mean = mean / static_cast<double>(sample.size());
          rec.lo = empirical_quantile(sample, 0.025);
          rec.hi = empirical_quantile(sample, 0.975);
          rec.covered = rec.lo <= rec.observed && rec.observed <= rec.hi;
          recs.push_back(std::move(rec));
        }
      }
    });

    std::size_t fold_records = 0;
    for (int ti = 0; ti < n_test; ++ti) {
      fold_records += slot[static_cast<std::size_t>(ti)].size();
      summary.psi_draws_failed += failures[static_cast<std::size_t>(ti)];
      for (auto& rec : slot[static_cast<std::size_t>(ti)]) summary.records.push_back(std::move(rec));
    }
    if (fold_records == 0)
      throw std::runtime_error("evaluate_cv: fold " + std::to_string(f + 1) +
                               " held out no scorable observations");
  }

  bin_records(summary, cv.age_bin_width);
  return summary;
}

}  // namespace ldmix
