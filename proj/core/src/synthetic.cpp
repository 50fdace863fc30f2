#include "ldmix/synthetic.hpp"

#include "ldmix/inference.hpp"
#include "ldmix/latent.hpp"
#include "ldmix/math.hpp"
#include "ldmix/measurement.hpp"
#include "ldmix/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ldmix {

SimulationTruth default_truth() {
  constexpr int K = 9;
  constexpr int L = 2;
  SimulationTruth t;
  t.marker_types = {MarkerType::cognitive, MarkerType::cognitive, MarkerType::cognitive,
                    MarkerType::mri,       MarkerType::mri,       MarkerType::mri,
                    MarkerType::csf,       MarkerType::csf,       MarkerType::csf};

  MeasurementParams& m = t.params.measurement;
  m.gamma1.resize(K);
  m.gamma2.resize(K);
  m.gamma3.resize(K);
  m.gamma1 << 1.0, 1.5, 2.0, 2.5, 1.2, 3.0, 1.8, 2.2, 2.8;
  m.gamma2 << 1.0, 2.0, 1.5, 2.5, 3.0, 1.2, 3.5, 4.0, 2.8;
  m.gamma3 << -2.0, -1.0, -1.5, 0.0, 0.5, 1.0, 1.5, 2.5, 3.0;
  m.beta.resize(K, 3);  // columns: time, x1, x2
  m.beta << -0.10,  0.10,  0.05,
             0.05, -0.10,  0.10,
            -0.05,  0.15, -0.05,
             0.10,  0.05, -0.10,
            -0.08, -0.05,  0.08,
             0.06,  0.12,  0.04,
            -0.12,  0.08, -0.06,
             0.04, -0.15,  0.10,
             0.08,  0.06, -0.12;
  // mu_type = the per-type mean of gamma3 (cognitive, mri, csf order).
  m.mu_type.resize(3);
  m.mu_type << -1.5, 0.5, 7.0 / 3.0;
  m.sigma = Eigen::MatrixXd::Constant(L, K, 0.3);

  StructuralParams& s = t.params.structural;
  s.alpha.resize(1);
  s.alpha << 0.4;  // alpha_t
  s.alpha0.resize(L);
  s.alpha0 << 0.0, 2.0;
  s.rho.resize(L);
  s.rho << 1.3, 0.8;
  s.lambda.resize(L);
  s.lambda << 0.35, 0.65;
  return t;
}

CohortSchema simulation_schema(const SimulationTruth& truth) {
  CohortSchema schema;
  schema.id_col = "subject_id";
  schema.age_col = "age";
  for (int k = 0; k < truth.n_markers(); ++k)
    schema.marker_cols.push_back("m" + std::to_string(k + 1));
  schema.marker_types = truth.marker_types;
  schema.censor = truth.design.censor;
  schema.x_cols = {"time", "x1", "x2"};
  schema.z_cols = {"time"};
  schema.standardize_markers = truth.design.standardize_markers;
  return schema;
}

SimulatedCohort simulate_cohort(const SimulationTruth& truth, std::uint64_t seed) {
  const SimulationDesign& design = truth.design;
  const int n = design.n_subjects;
  const int J = design.n_visits;
  const int K = truth.n_markers();
  if (n < 1 || J < 1) throw std::invalid_argument("simulate_cohort: empty design");
  if (truth.params.measurement.beta.cols() != 3)
    throw std::invalid_argument("simulate_cohort: truth beta must have (time, x1, x2) columns");
  if (truth.params.structural.alpha.size() != 1)
    throw std::invalid_argument("simulate_cohort: truth alpha must be the time coefficient only");
  if (!design.censor.empty() && static_cast<int>(design.censor.size()) != K)
    throw std::invalid_argument("simulate_cohort: censor rules must parallel markers");

  Rng root(seed);
  // Stage 1: every age and covariate, so the pooled standardization is known
  // before any model quantity is computed.
  Eigen::VectorXd baseline(n), x1(n), x2(n);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    if (!design.age_pool.empty()) {
      baseline[i] = design.age_pool[rng.integer(design.age_pool.size())];
    } else {
      baseline[i] = rng.truncated_normal(design.age_mean, design.age_sd, design.age_lo, design.age_hi);
    }
    x1[i] = rng.bernoulli(design.x1_prob) ? 1.0 : 0.0;
    x2[i] = rng.normal();
    labels[static_cast<std::size_t>(i)] = rng.categorical(truth.params.structural.lambda);
  }

  // Pooled age mean / population sd over all visit rows, in the same
  // accumulation order build_cohort uses, so the standardized times the
  // cohort stores are bit-identical to the ones the data were generated from.
  std::vector<double> all_ages;
  all_ages.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(J));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < J; ++j) all_ages.push_back(baseline[i] + design.visit_spacing_years * j);
  const double age_mean =
      std::accumulate(all_ages.begin(), all_ages.end(), 0.0) / static_cast<double>(all_ages.size());
  double ss = 0.0;
  for (double a : all_ages) ss += (a - age_mean) * (a - age_mean);
  const double age_sd = std::sqrt(ss / static_cast<double>(all_ages.size()));
  if (!(age_sd > 0.0)) throw std::invalid_argument("simulate_cohort: degenerate age design");

  // Stage 2: per-subject latent path and panel on standardized time.
  const MeasurementParams& mp = truth.params.measurement;
  const StructuralParams& sp = truth.params.structural;
  std::vector<RawSubject> raw(static_cast<std::size_t>(n));
  SimulatedCohort out;
  out.theta.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i)).split(1);
    const int c = labels[static_cast<std::size_t>(i)];
    Eigen::VectorXd ages(J), times(J);
    for (int j = 0; j < J; ++j) {
      ages[j] = baseline[i] + design.visit_spacing_years * j;
      times[j] = (ages[j] - age_mean) / age_sd;
    }
    const GpFactor gp = gp_covariance(times, sp.rho[c]);
    const Eigen::VectorXd theta = gp_sample(gp, rng);

    Eigen::MatrixXd y(J, K);
    for (int j = 0; j < J; ++j) {
      const double d = -sp.alpha0[c] + sp.alpha[0] * times[j] + theta[j];
      for (int k = 0; k < K; ++k) {
        const double mu = mp.beta(k, 0) * times[j] + mp.beta(k, 1) * x1[i] +
                          mp.beta(k, 2) * x2[i] + sigmoid_shift(d, k, mp);
        double v = mu + mp.sigma(c, k) * rng.normal();
        if (!design.censor.empty()) {
          const CensorRule& rule = design.censor[static_cast<std::size_t>(k)];
          if (rule.side == CensorSide::ceiling)
            v = std::min(v, rule.bound);
          else if (rule.side == CensorSide::floor)
            v = std::max(v, rule.bound);
        }
        y(j, k) = v;
      }
    }

    RawSubject& rs = raw[static_cast<std::size_t>(i)];
    rs.id = "s" + std::to_string(i + 1);
    rs.ages = ages;
    rs.y = y;
    rs.x_extra.resize(J, 2);
    rs.x_extra.col(0).setConstant(x1[i]);
    rs.x_extra.col(1).setConstant(x2[i]);
    rs.z_extra.resize(J, 0);
    out.theta[static_cast<std::size_t>(i)] = theta;
  }

  out.cohort = build_cohort(std::move(raw), simulation_schema(truth));
  out.labels = std::move(labels);
  return out;
}

namespace {

struct RecoveryAccum {
  std::vector<double> post_mean;  // per replicate
  int covered = 0;
  int count = 0;
};

}  // namespace

ReplicateReport replicate_study(const SimulationTruth& truth, const ReplicateConfig& config) {
  if (config.replicates < 1) throw std::invalid_argument("replicate_study: needs >= 1 replicate");
  if (config.L_list.empty()) throw std::invalid_argument("replicate_study: empty L list");

  const int R = config.replicates;
  const auto n_L = static_cast<int>(config.L_list.size());
  const int truth_L = truth.n_clusters();
  const int recovery_L = config.recovery_L > 0 ? config.recovery_L : truth_L;

  ReplicateReport report;
  report.L_list = config.L_list;
  report.bic = Eigen::MatrixXd::Constant(R, n_L, quiet_nan());
  report.selected_L.assign(static_cast<std::size_t>(R), 0);

  // Per-replicate recovery rows (posterior mean, interval) gathered at
  // recovery_L; reduced to MSE / coverage after all replicates finish.
  std::vector<std::vector<double>> means(static_cast<std::size_t>(R));
  std::vector<std::vector<std::uint8_t>> covers(static_cast<std::size_t>(R));
  std::vector<std::vector<std::string>> notes(static_cast<std::size_t>(R));
  std::vector<std::string> names;
  Eigen::VectorXd truth_values;

  {
    // Fixed reporting layout for the truth values, independent of replicate.
    // Under a misspecified recovery_L only the blocks shared across cluster
    // counts (beta, gamma, mu_type, alpha) line up with the truth layout; the
    // truth vector is padded with NaN where no true value exists.
    const SimulatedCohort probe = simulate_cohort(truth, config.seed);
    const ModelConfig mc =
        make_model_config(probe.cohort, recovery_L, truth.params.measurement.gamma1, config.prior);
    names = mc.layout.parameter_names(mc.type_slot_names);
    if (recovery_L == truth_L) {
      truth_values = mc.layout.constrained_values(truth.params);
    } else {
      const ModelConfig tc =
          make_model_config(probe.cohort, truth_L, truth.params.measurement.gamma1, config.prior);
      const auto truth_names = tc.layout.parameter_names(tc.type_slot_names);
      const Eigen::VectorXd tv = tc.layout.constrained_values(truth.params);
      truth_values = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(names.size()), quiet_nan());
      for (std::size_t c = 0; c < names.size(); ++c) {
        const auto it = std::find(truth_names.begin(), truth_names.end(), names[c]);
        if (it != truth_names.end())
          truth_values[static_cast<Eigen::Index>(c)] = tv[it - truth_names.begin()];
      }
    }
  }

  parallel_for(R, config.threads, [&](int r) {
    const std::uint64_t sim_seed = config.seed + 7919ULL * static_cast<std::uint64_t>(r);
    const SimulatedCohort sim = simulate_cohort(truth, sim_seed);
    for (int li = 0; li < n_L; ++li) {
      const int L = config.L_list[static_cast<std::size_t>(li)];
      try {
        const ModelConfig mc =
            make_model_config(sim.cohort, L, truth.params.measurement.gamma1, config.prior);
        SamplerConfig sampler = config.sampler;
        sampler.seed = config.sampler.seed +
                       0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(r * n_L + li + 1);
        const PosteriorDraws fit = run_chains(sim.cohort, mc, sampler);
        const MapEstimate map = map_estimate(fit, sim.cohort, mc, config.map_polish);
        const ModelScore score = bic(map.params, sim.cohort, mc);
        report.bic(r, li) = score.bic;

        if (L == recovery_L) {
          const int chain = select_chain(fit);
          const Eigen::MatrixXd& rows = fit.chains[static_cast<std::size_t>(chain)].draws;
          auto& mrow = means[static_cast<std::size_t>(r)];
          auto& crow = covers[static_cast<std::size_t>(r)];
          mrow.resize(static_cast<std::size_t>(rows.cols()));
          crow.resize(static_cast<std::size_t>(rows.cols()));
          std::vector<double> col(static_cast<std::size_t>(rows.rows()));
          for (Eigen::Index c = 0; c < rows.cols(); ++c) {
            for (Eigen::Index d = 0; d < rows.rows(); ++d)
              col[static_cast<std::size_t>(d)] = rows(d, c);
            const double mean =
                std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
            const double lo = empirical_quantile(col, 0.025);
            const double hi = empirical_quantile(col, 0.975);
            mrow[static_cast<std::size_t>(c)] = mean;
            crow[static_cast<std::size_t>(c)] =
                lo <= truth_values[c] && truth_values[c] <= hi ? 1 : 0;
          }
        }
      } catch (const std::exception& e) {
        notes[static_cast<std::size_t>(r)].push_back(
            "replicate " + std::to_string(r + 1) + ", L=" + std::to_string(L) + ": " + e.what());
      }
    }
  });

  for (int r = 0; r < R; ++r) {
    for (const auto& note : notes[static_cast<std::size_t>(r)]) {
      report.failure_notes.push_back(note);
      ++report.fit_failures;
    }
    double best = std::numeric_limits<double>::infinity();
    int best_L = 0;
    for (int li = 0; li < n_L; ++li) {
      const double b = report.bic(r, li);
      if (std::isnan(b)) continue;
      const int L = report.L_list[static_cast<std::size_t>(li)];
      if (b < best || (b == best && L < best_L)) {
        best = b;
        best_L = L;
      }
    }
    report.selected_L[static_cast<std::size_t>(r)] = best_L;
  }

  report.recovery.resize(names.size());
  for (std::size_t c = 0; c < names.size(); ++c) {
    ParameterRecovery& rec = report.recovery[c];
    rec.name = names[c];
    rec.truth = truth_values[static_cast<Eigen::Index>(c)];
    if (std::isnan(rec.truth)) {  // no true value under a misspecified recovery_L
      rec.mse = quiet_nan();
      rec.coverage = quiet_nan();
      continue;
    }
    double sq = 0.0;
    for (int r = 0; r < R; ++r) {
      if (means[static_cast<std::size_t>(r)].empty()) continue;  // fit failed
      const double d = means[static_cast<std::size_t>(r)][c] - rec.truth;
      sq += d * d;
      rec.coverage += covers[static_cast<std::size_t>(r)][c];
      ++rec.n_replicates;
    }
    if (rec.n_replicates > 0) {
      rec.mse = sq / rec.n_replicates;
      rec.coverage /= rec.n_replicates;
    }
  }
  return report;
}

}  // namespace ldmix
