// ldmix command-line tool: simulate | fit | bic | predict | evaluate |
// membership.  Every artifact-producing command snapshots its effective
// configuration into a manifest, never overwrites without --force, and is
// byte-identical when rerun with the same seed, config, and thread count.
//
// Exit codes: 0 success, 1 user error (flags, config, inputs), 2 numerical
// failure (non-convergence, degenerate linear algebra).

#include "ldmix/dynamics.hpp"
#include "ldmix/inference.hpp"
#include "ldmix/io.hpp"
#include "ldmix/math.hpp"
#include "ldmix/synthetic.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

namespace {

using namespace ldmix;

int default_threads() {
  if (const char* env = std::getenv("LDMIX_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_g17(v[i]);
  }
  return s;
}

// Sampler options shared by fit-like commands.
struct SamplerFlags {
  int chains = 2;
  int warmup = 1000;
  int draws = 1000;
  double target_accept = 0.8;
  double path_length = 1.2;
  int max_leapfrog = 1024;

  void attach(CLI::App* cmd) {
    cmd->add_option("--chains", chains, "number of HMC chains");
    cmd->add_option("--warmup", warmup, "warmup (burn-in) iterations per chain");
    cmd->add_option("--draws", draws, "posterior draws kept per chain");
    cmd->add_option("--target-accept", target_accept, "dual-averaging acceptance target");
    cmd->add_option("--path-length", path_length, "leapfrog integration path length");
    cmd->add_option("--max-leapfrog", max_leapfrog, "cap on leapfrog steps per iteration");
  }

  SamplerConfig build(std::uint64_t seed, int threads) const {
    SamplerConfig cfg;
    cfg.chains = chains;
    cfg.warmup = warmup;
    cfg.draws = draws;
    cfg.target_accept = target_accept;
    cfg.path_length = path_length;
    cfg.max_leapfrog = max_leapfrog;
    cfg.seed = seed;
    cfg.threads = threads;
    return cfg;
  }

  void snapshot(KvConfig& kv) const {
    kv["chains"] = std::to_string(chains);
    kv["warmup"] = std::to_string(warmup);
    kv["draws"] = std::to_string(draws);
    kv["target_accept"] = format_g17(target_accept);
    kv["path_length"] = format_g17(path_length);
    kv["max_leapfrog"] = std::to_string(max_leapfrog);
  }
};

void print_fit_diagnostics(const PosteriorDraws& draws) {
  double max_rhat = 0.0, min_ess = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < draws.rhat.size(); ++i) {
    if (std::isfinite(draws.rhat[i])) max_rhat = std::max(max_rhat, draws.rhat[i]);
    if (std::isfinite(draws.ess[i])) min_ess = std::min(min_ess, draws.ess[i]);
  }
  int divergences = 0;
  for (const auto& ch : draws.chains) divergences += ch.n_divergences;
  std::string reason;
  const int sel = select_chain(draws, &reason);
  std::cout << "chains: " << draws.chains.size() << ", draws/chain: " << draws.n_draws_per_chain()
            << "\nmax split R-hat: " << max_rhat << ", min ESS: " << min_ess
            << "\ndivergences (sampling phase): " << divergences << "\nselected chain: " << sel + 1
            << " (" << reason << ")\n";
}

// ---------------------------------------------------------------- simulate --

struct SimulateArgs {
  std::string truth_file;
  std::string out_dir = "sim";
  std::uint64_t seed = 1;
  int subjects = 0;  // 0 = keep truth design
  int visits = 0;
  bool force = false;
};

int run_simulate(const SimulateArgs& a) {
  SimulationTruth truth = a.truth_file.empty() ? default_truth() : read_truth(a.truth_file);
  if (a.subjects > 0) truth.design.n_subjects = a.subjects;
  if (a.visits > 0) truth.design.n_visits = a.visits;

  ensure_dir(a.out_dir);
  const std::string cohort_path = a.out_dir + "/cohort.csv";
  const std::string labels_path = a.out_dir + "/labels.csv";
  const std::string theta_path = a.out_dir + "/theta.csv";
  const std::string truth_path = a.out_dir + "/truth.json";
  const std::string schema_path = a.out_dir + "/schema.json";
  const std::string manifest_path = a.out_dir + "/manifest.json";
  for (const auto& p : {cohort_path, labels_path, theta_path, truth_path, schema_path, manifest_path})
    require_writable(p, a.force);

  const SimulatedCohort sim = simulate_cohort(truth, a.seed);
  emit_csv(sim.cohort, cohort_path);
  write_truth(truth_path, truth);
  write_schema_json(schema_path, simulation_schema(truth));

  {
    std::ofstream out(labels_path);
    out << "subject_id,cluster\n";
    for (int i = 0; i < sim.cohort.n_subjects(); ++i)
      out << sim.cohort.subjects[static_cast<std::size_t>(i)].id << ','
          << sim.labels[static_cast<std::size_t>(i)] + 1 << '\n';
    if (!out) throw std::runtime_error("io: write failed for '" + labels_path + "'");
  }
  {
    std::ofstream out(theta_path);
    out << "subject_id,age,theta\n";
    for (int i = 0; i < sim.cohort.n_subjects(); ++i) {
      const Subject& s = sim.cohort.subjects[static_cast<std::size_t>(i)];
      const Eigen::VectorXd& th = sim.theta[static_cast<std::size_t>(i)];
      for (int j = 0; j < s.n_visits(); ++j)
        out << s.id << ',' << format_g17(s.ages[j]) << ',' << format_g17(th[j]) << '\n';
    }
    if (!out) throw std::runtime_error("io: write failed for '" + theta_path + "'");
  }

  RunManifest manifest;
  manifest.command = "simulate";
  manifest.seed = a.seed;
  manifest.config["seed"] = std::to_string(a.seed);
  manifest.config["truth"] = a.truth_file.empty() ? "<built-in>" : a.truth_file;
  manifest.config["subjects"] = std::to_string(truth.design.n_subjects);
  manifest.config["visits"] = std::to_string(truth.design.n_visits);
  if (!a.truth_file.empty()) manifest.inputs[a.truth_file] = file_digest(a.truth_file);
  manifest.outputs = {cohort_path, labels_path, theta_path, truth_path, schema_path};
  write_manifest(manifest_path, manifest);

  std::cout << "simulated " << sim.cohort.n_subjects() << " subjects, "
            << sim.cohort.total_visits << " visits -> " << a.out_dir << "\n";
  return 0;
}

// --------------------------------------------------------------------- fit --

struct FitArgs {
  std::string data;
  std::string schema;
  std::string out_dir = "fit";
  int L = 2;
  std::vector<double> gamma1;
  std::uint64_t seed = 1;
  int threads = default_threads();
  bool force = false;
  SamplerFlags sampler;
  double rho_a = quiet_nan(), rho_b = quiet_nan();
  std::vector<double> rho_interval;
};

KvConfig fit_snapshot(const FitArgs& a) {
  KvConfig kv;
  kv["data"] = a.data;
  kv["schema"] = a.schema;
  kv["L"] = std::to_string(a.L);
  kv["gamma1"] = a.gamma1.empty() ? "<ones>" : join_doubles(a.gamma1);
  kv["seed"] = std::to_string(a.seed);
  kv["threads"] = std::to_string(a.threads);
  a.sampler.snapshot(kv);
  if (std::isfinite(a.rho_a)) kv["rho_prior_a"] = format_g17(a.rho_a);
  if (std::isfinite(a.rho_b)) kv["rho_prior_b"] = format_g17(a.rho_b);
  if (!a.rho_interval.empty()) kv["rho_interval"] = join_doubles(a.rho_interval);
  return kv;
}

std::pair<CohortData, ModelConfig> load_training(const FitArgs& a, int L) {
  const CohortSchema schema = read_schema_json(a.schema);
  const CohortData cohort = ingest_csv(a.data, schema);
  Eigen::VectorXd g1(static_cast<Eigen::Index>(a.gamma1.size()));
  for (std::size_t i = 0; i < a.gamma1.size(); ++i) g1[static_cast<Eigen::Index>(i)] = a.gamma1[i];
  PriorConfig prior;
  prior.rho_a = a.rho_a;
  prior.rho_b = a.rho_b;
  if (!a.rho_interval.empty()) {
    if (a.rho_interval.size() != 2)
      throw std::invalid_argument("--rho-interval expects exactly two values: lo,hi");
    prior.rho_interval_lo = a.rho_interval[0];
    prior.rho_interval_hi = a.rho_interval[1];
  }
  return {cohort, make_model_config(cohort, L, g1, prior)};
}

int run_fit(const FitArgs& a) {
  auto [cohort, config] = load_training(a, a.L);
  require_writable(a.out_dir + "/manifest.json", a.force);

  const PosteriorDraws draws = run_chains(cohort, config, a.sampler.build(a.seed, a.threads));

  RunManifest manifest;
  manifest.command = "fit";
  manifest.seed = a.seed;
  manifest.config = fit_snapshot(a);
  manifest.inputs[a.data] = file_digest(a.data);
  manifest.inputs[a.schema] = file_digest(a.schema);
  for (std::size_t c = 0; c < draws.chains.size(); ++c)
    manifest.outputs.push_back(a.out_dir + "/chain_" + std::to_string(c + 1) + ".csv");
  manifest.outputs.push_back(a.out_dir + "/model.json");
  save_fit(a.out_dir, draws, config, cohort, manifest, a.force);

  print_fit_diagnostics(draws);
  std::cout << "saved fit -> " << a.out_dir << "\n";
  return 0;
}

// --------------------------------------------------------------------- bic --

struct BicArgs {
  FitArgs fit;  // out_dir is the root; per-L artifacts live below it
  std::vector<int> L_list = {1, 2, 3};
  int map_polish = 50;
};

int run_bic(const BicArgs& a) {
  ensure_dir(a.fit.out_dir);
  const std::string scores_path = a.fit.out_dir + "/scores.csv";
  const std::string manifest_path = a.fit.out_dir + "/manifest.json";
  require_writable(scores_path, a.fit.force);
  require_writable(manifest_path, a.fit.force);

  std::vector<ModelScore> scores;
  for (std::size_t li = 0; li < a.L_list.size(); ++li) {
    const int L = a.L_list[li];
    auto [cohort, config] = load_training(a.fit, L);
    SamplerConfig sampler = a.fit.sampler.build(a.fit.seed, a.fit.threads);
    sampler.seed = a.fit.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(li);
    const PosteriorDraws draws = run_chains(cohort, config, sampler);
    const MapEstimate map = map_estimate(draws, cohort, config, a.map_polish, a.fit.threads);
    scores.push_back(bic(map.params, cohort, config));

    const std::string sub = a.fit.out_dir + "/L" + std::to_string(L);
    RunManifest sub_manifest;
    sub_manifest.command = "bic";
    sub_manifest.seed = sampler.seed;
    sub_manifest.config = fit_snapshot(a.fit);
    sub_manifest.config["L"] = std::to_string(L);
    sub_manifest.inputs[a.fit.data] = file_digest(a.fit.data);
    sub_manifest.inputs[a.fit.schema] = file_digest(a.fit.schema);
    save_fit(sub, draws, config, cohort, sub_manifest, a.fit.force);
    std::cout << "L=" << L << ": BIC " << format_g17(scores.back().bic) << " (dim "
              << scores.back().dim_psi << ", map lp " << format_g17(scores.back().map_log_posterior)
              << ")\n";
  }

  const int chosen = select_L(scores);
  write_scores_csv(scores_path, scores, chosen);

  RunManifest manifest;
  manifest.command = "bic";
  manifest.seed = a.fit.seed;
  manifest.config = fit_snapshot(a.fit);
  manifest.config.erase("L");
  manifest.config["L_list"] = join_ints(a.L_list);
  manifest.config["map_polish"] = std::to_string(a.map_polish);
  manifest.inputs[a.fit.data] = file_digest(a.fit.data);
  manifest.inputs[a.fit.schema] = file_digest(a.fit.schema);
  manifest.outputs.push_back(scores_path);
  for (int L : a.L_list) manifest.outputs.push_back(a.fit.out_dir + "/L" + std::to_string(L));
  write_manifest(manifest_path, manifest);

  std::cout << "selected L = " << chosen << " -> " << scores_path << "\n";
  return 0;
}

// -------------------------------------------------------------- membership --

struct MembershipArgs {
  std::string fit_dir;
  std::string data;
  std::string out_dir = "membership";
  int threads = default_threads();
  bool force = false;
  bool years = false;
};

int run_membership(const MembershipArgs& a) {
  const FittedModel fit = load_fit(a.fit_dir);
  const CohortData cohort =
      build_cohort_with(read_raw_csv(a.data, fit.schema), fit.schema, fit.standardization);

  ensure_dir(a.out_dir);
  const std::string member_path = a.out_dir + "/membership.csv";
  const std::string resilience_path = a.out_dir + "/resilience.csv";
  const std::string manifest_path = a.out_dir + "/manifest.json";
  require_writable(member_path, a.force);
  require_writable(manifest_path, a.force);

  const MembershipTable table = membership(fit.draws, cohort, fit.config, a.threads);
  write_membership_csv(member_path, table);
  if (table.draws_failed > 0)
    std::cerr << "warning: " << table.draws_failed
              << " parameter draws dropped (Laplace failure)\n";

  RunManifest manifest;
  manifest.command = "membership";
  manifest.config["fit"] = a.fit_dir;
  manifest.config["data"] = a.data;
  manifest.config["threads"] = std::to_string(a.threads);
  manifest.config["years"] = a.years ? "1" : "0";
  manifest.inputs[a.fit_dir + "/manifest.json"] = file_digest(a.fit_dir + "/manifest.json");
  manifest.inputs[a.data] = file_digest(a.data);
  manifest.outputs.push_back(member_path);

  bool has_time = false;
  for (const auto& c : cohort.schema.z_cols) has_time = has_time || c == "time";
  if (fit.config.n_clusters >= 2 && has_time) {
    require_writable(resilience_path, a.force);
    const ResilienceSummary rs = resilience_summary(fit.draws, cohort, fit.config, a.years);
    write_resilience_csv(resilience_path, rs);
    if (rs.alpha_t_unstable)
      std::cerr << "warning: alpha_t posterior mass near zero; resilience ratio is unstable\n";
    manifest.outputs.push_back(resilience_path);
  }
  write_manifest(manifest_path, manifest);

  std::cout << "membership for " << cohort.n_subjects() << " subjects (" << table.draws_used
            << " draws) -> " << a.out_dir << "\n";
  return 0;
}

// ----------------------------------------------------------------- predict --

struct PredictArgs {
  std::string fit_dir;
  std::string data;
  std::string out_dir = "predict";
  std::string subject;          // empty = all subjects
  std::vector<double> horizon_ages;
  int horizon_steps = 0;
  double horizon_spacing = 2.0;
  int history = 0;              // 0 = all visits
  int draws_per_psi = 1;
  int thin = 1;
  bool map_only = false;
  int map_draws = 200;
  std::uint64_t seed = 1;
  int threads = default_threads();
  bool write_draws = false;
  bool force = false;
};

int run_predict(const PredictArgs& a) {
  if (a.horizon_ages.empty() && a.horizon_steps <= 0)
    throw std::invalid_argument("predict: provide --horizon-ages or --horizon-steps");

  const FittedModel fit = load_fit(a.fit_dir);
  const CohortData cohort =
      build_cohort_with(read_raw_csv(a.data, fit.schema), fit.schema, fit.standardization);

  std::vector<int> subjects;
  for (int i = 0; i < cohort.n_subjects(); ++i)
    if (a.subject.empty() || cohort.subjects[static_cast<std::size_t>(i)].id == a.subject)
      subjects.push_back(i);
  if (subjects.empty())
    throw std::invalid_argument("predict: subject '" + a.subject + "' not in '" + a.data + "'");

  ensure_dir(a.out_dir);
  const std::string summary_path = a.out_dir + "/predictions.csv";
  const std::string qhat_path = a.out_dir + "/cluster_probs.csv";
  const std::string draws_path = a.out_dir + "/draws.csv";
  const std::string manifest_path = a.out_dir + "/manifest.json";
  require_writable(summary_path, a.force);
  require_writable(qhat_path, a.force);
  if (a.write_draws) require_writable(draws_path, a.force);
  require_writable(manifest_path, a.force);

  // MAP mode works from the artifact alone: the highest stored joint log
  // posterior in the selected chain stands in for the MAP draw.  (Polishing
  // would need the training data, which the artifact deliberately omits.)
  ParameterSet map_params;
  if (a.map_only) {
    const ChainResult& ch = fit.draws.chains[static_cast<std::size_t>(select_chain(fit.draws))];
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < ch.lp.size(); ++r)
      if (ch.lp[r] > ch.lp[best]) best = r;
    map_params = params_from_row(ch.draws.row(best).transpose(), fit.config);
  }

  std::ofstream sum_out(summary_path);
  sum_out << "subject_id,age,marker,mean,lo,hi\n";
  std::ofstream qhat_out(qhat_path);
  qhat_out << "subject_id,cluster,prob\n";
  std::ofstream draws_out;
  if (a.write_draws) {
    draws_out.open(draws_path);
    draws_out << "subject_id,draw,cluster,age,marker,value\n";
  }

  const Standardization& st = fit.standardization;
  int failures = 0;
  for (int idx : subjects) {
    const Subject& s = cohort.subjects[static_cast<std::size_t>(idx)];
    const int history = a.history > 0 ? std::min(a.history, s.n_visits()) : s.n_visits();

    std::vector<double> ages = a.horizon_ages;
    if (ages.empty()) {
      const double last = s.ages[history - 1];
      for (int k = 1; k <= a.horizon_steps; ++k) ages.push_back(last + a.horizon_spacing * k);
    }
    Eigen::VectorXd times(static_cast<Eigen::Index>(ages.size()));
    for (std::size_t i = 0; i < ages.size(); ++i)
      times[static_cast<Eigen::Index>(i)] = (ages[i] - st.age_mean) / st.age_sd;
    const Horizon horizon = default_horizon(s, history, times, fit.schema);

    Rng rng(a.seed, static_cast<std::uint64_t>(idx));
    TrajectoryDraws traj;
    if (a.map_only) {
      traj = predict_trajectory(s, history, horizon, map_params, fit.config, fit.censoring,
                                a.map_draws, rng);
    } else {
      traj = predict_over_draws(s, history, horizon, fit.draws, fit.config, fit.censoring,
                                a.draws_per_psi, rng, a.thin);
      failures += traj.psi_draws_failed;
    }

    const TrajectorySummary summary = summarize_trajectory(traj);
    for (Eigen::Index t = 0; t < summary.times.size(); ++t)
      for (Eigen::Index k = 0; k < summary.mean.cols(); ++k) {
        const int ki = static_cast<int>(k);
        const double raw_age = summary.times[t] * st.age_sd + st.age_mean;
        auto raw = [&](double v) {
          return st.markers_standardized ? v * st.marker_sd[ki] + st.marker_mean[ki] : v;
        };
        sum_out << s.id << ',' << format_g17(raw_age) << ','
                << fit.schema.marker_cols[static_cast<std::size_t>(k)] << ','
                << format_g17(raw(summary.mean(t, k))) << ',' << format_g17(raw(summary.lo(t, k)))
                << ',' << format_g17(raw(summary.hi(t, k))) << '\n';
      }
    for (Eigen::Index l = 0; l < traj.q_hat.size(); ++l)
      qhat_out << s.id << ',' << l + 1 << ',' << format_g17(traj.q_hat[l]) << '\n';
    if (a.write_draws)
      for (std::size_t r = 0; r < traj.y.size(); ++r)
        for (Eigen::Index t = 0; t < traj.times.size(); ++t)
          for (Eigen::Index k = 0; k < traj.y[r].cols(); ++k) {
            const int ki = static_cast<int>(k);
            const double v = st.markers_standardized
                                 ? traj.y[r](t, k) * st.marker_sd[ki] + st.marker_mean[ki]
                                 : traj.y[r](t, k);
            draws_out << s.id << ',' << r + 1 << ',' << traj.cluster[r] + 1 << ','
                      << format_g17(traj.times[t] * st.age_sd + st.age_mean) << ','
                      << fit.schema.marker_cols[static_cast<std::size_t>(k)] << ','
                      << format_g17(v) << '\n';
          }
  }
  if (!sum_out || !qhat_out || (a.write_draws && !draws_out))
    throw std::runtime_error("predict: write failed under '" + a.out_dir + "'");
  sum_out.close();
  qhat_out.close();
  if (a.write_draws) draws_out.close();
  if (failures > 0)
    std::cerr << "warning: " << failures << " parameter draws dropped (Laplace failure)\n";

  RunManifest manifest;
  manifest.command = "predict";
  manifest.seed = a.seed;
  manifest.config["fit"] = a.fit_dir;
  manifest.config["data"] = a.data;
  manifest.config["subject"] = a.subject.empty() ? "<all>" : a.subject;
  manifest.config["horizon_ages"] = join_doubles(a.horizon_ages);
  manifest.config["horizon_steps"] = std::to_string(a.horizon_steps);
  manifest.config["horizon_spacing"] = format_g17(a.horizon_spacing);
  manifest.config["history"] = std::to_string(a.history);
  manifest.config["draws_per_psi"] = std::to_string(a.draws_per_psi);
  manifest.config["thin"] = std::to_string(a.thin);
  manifest.config["map_only"] = a.map_only ? "1" : "0";
  manifest.config["map_draws"] = std::to_string(a.map_draws);
  manifest.config["seed"] = std::to_string(a.seed);
  manifest.config["threads"] = std::to_string(a.threads);
  manifest.inputs[a.fit_dir + "/manifest.json"] = file_digest(a.fit_dir + "/manifest.json");
  manifest.inputs[a.data] = file_digest(a.data);
  manifest.outputs = {summary_path, qhat_path};
  if (a.write_draws) manifest.outputs.push_back(draws_path);
  write_manifest(manifest_path, manifest);

  std::cout << "predictions for " << subjects.size() << " subject(s) -> " << a.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate --

struct EvaluateArgs {
  FitArgs fit;
  int folds = 5;
  double bin_width = 5.0;
  int predictive_draws = 1;
  int thin = 1;
  bool map_only = false;
  int map_polish = 50;
};

int run_evaluate(const EvaluateArgs& a) {
  auto [cohort, config] = load_training(a.fit, a.fit.L);

  ensure_dir(a.fit.out_dir);
  const std::string eval_path = a.fit.out_dir + "/evaluation.csv";
  const std::string records_path = a.fit.out_dir + "/records.csv";
  const std::string manifest_path = a.fit.out_dir + "/manifest.json";
  require_writable(eval_path, a.fit.force);
  require_writable(records_path, a.fit.force);
  require_writable(manifest_path, a.fit.force);

  CvConfig cv;
  cv.folds = a.folds;
  cv.seed = a.fit.seed;
  cv.age_bin_width = a.bin_width;
  cv.sampler = a.fit.sampler.build(a.fit.seed, a.fit.threads);
  cv.map_only = a.map_only;
  cv.predictive_draws = a.predictive_draws;
  cv.map_polish = a.map_polish;
  cv.thin = a.thin;
  cv.threads = a.fit.threads;
  const PredictiveSummary summary = evaluate_cv(cohort, config, cv);

  write_evaluation_csv(eval_path, summary);
  write_prediction_records_csv(records_path, summary, cohort.schema);
  if (summary.psi_draws_failed > 0)
    std::cerr << "warning: " << summary.psi_draws_failed
              << " parameter draws dropped (Laplace failure)\n";

  RunManifest manifest;
  manifest.command = "evaluate";
  manifest.seed = a.fit.seed;
  manifest.config = fit_snapshot(a.fit);
  manifest.config["folds"] = std::to_string(a.folds);
  manifest.config["bin_width"] = format_g17(a.bin_width);
  manifest.config["predictive_draws"] = std::to_string(a.predictive_draws);
  manifest.config["thin"] = std::to_string(a.thin);
  manifest.config["map_only"] = a.map_only ? "1" : "0";
  manifest.inputs[a.fit.data] = file_digest(a.fit.data);
  manifest.inputs[a.fit.schema] = file_digest(a.fit.schema);
  manifest.outputs = {eval_path, records_path};
  write_manifest(manifest_path, manifest);

  std::cout << "evaluated " << summary.n_predictions
            << " one-step-ahead predictions (overall MAE " << format_g17(summary.overall_mae)
            << ", coverage " << format_g17(summary.overall_coverage) << ") -> " << a.fit.out_dir
            << "\n";
  return 0;
}

void attach_fit_flags(CLI::App* cmd, FitArgs& a, bool with_L = true) {
  cmd->add_option("--data", a.data, "cohort CSV (long format)")->required();
  cmd->add_option("--schema", a.schema, "cohort schema JSON")->required();
  if (with_L) cmd->add_option("--L", a.L, "number of clusters");
  cmd->add_option("--gamma1", a.gamma1, "fixed sigmoid asymptotes (comma list; default all 1)")
      ->delimiter(',');
  cmd->add_option("--seed", a.seed, "RNG seed");
  cmd->add_option("--threads", a.threads, "worker threads (env LDMIX_THREADS overrides default)");
  cmd->add_option("--out", a.out_dir, "output directory");
  cmd->add_flag("--force", a.force, "overwrite existing outputs");
  cmd->add_option("--rho-prior-a", a.rho_a, "explicit rho prior shape (else solved from spans)");
  cmd->add_option("--rho-prior-b", a.rho_b, "explicit rho prior scale");
  cmd->add_option("--rho-interval", a.rho_interval,
                  "lo,hi span interval the rho prior's 98% mass should cover")
      ->delimiter(',');
  a.sampler.attach(cmd);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent disease-progression mixture: simulate, fit, select, predict"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "generate a synthetic cohort");
  sim->add_option("--truth", sim_args.truth_file, "truth table JSON (default: built-in)");
  sim->add_option("--seed", sim_args.seed, "RNG seed");
  sim->add_option("--subjects", sim_args.subjects, "override subject count");
  sim->add_option("--visits", sim_args.visits, "override visits per subject");
  sim->add_option("--out", sim_args.out_dir, "output directory");
  sim->add_flag("--force", sim_args.force, "overwrite existing outputs");
  sim->set_config("--config", "", "key=value configuration file (flags win)");

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "sample the joint posterior by HMC");
  attach_fit_flags(fit, fit_args);
  fit->set_config("--config", "", "key=value configuration file (flags win)");

  BicArgs bic_args;
  auto* bic_cmd = app.add_subcommand("bic", "fit over an L list and select by BIC");
  attach_fit_flags(bic_cmd, bic_args.fit, /*with_L=*/false);
  bic_cmd->add_option("--L", bic_args.L_list, "candidate cluster counts (comma list)")
      ->delimiter(',');
  bic_cmd->add_option("--map-polish", bic_args.map_polish, "coordinate line-search steps on the MAP");
  bic_cmd->set_config("--config", "", "key=value configuration file (flags win)");

  MembershipArgs mem_args;
  auto* mem = app.add_subcommand("membership", "posterior cluster membership from a fitted model");
  mem->add_option("--fit", mem_args.fit_dir, "fitted-model directory")->required();
  mem->add_option("--data", mem_args.data, "cohort CSV to score")->required();
  mem->add_option("--out", mem_args.out_dir, "output directory");
  mem->add_option("--threads", mem_args.threads, "worker threads");
  mem->add_flag("--years", mem_args.years, "report resilience in years");
  mem->add_flag("--force", mem_args.force, "overwrite existing outputs");
  mem->set_config("--config", "", "key=value configuration file (flags win)");

  PredictArgs pred_args;
  auto* pred = app.add_subcommand("predict", "forward trajectory prediction for subjects");
  pred->add_option("--fit", pred_args.fit_dir, "fitted-model directory")->required();
  pred->add_option("--data", pred_args.data, "history CSV (cohort format)")->required();
  pred->add_option("--subject", pred_args.subject, "restrict to one subject id");
  pred->add_option("--horizon-ages", pred_args.horizon_ages, "future ages in years (comma list)")
      ->delimiter(',');
  pred->add_option("--horizon-steps", pred_args.horizon_steps, "number of future visits");
  pred->add_option("--horizon-spacing", pred_args.horizon_spacing, "years between future visits");
  pred->add_option("--history", pred_args.history, "visits to condition on (default all)");
  pred->add_option("--draws-per-psi", pred_args.draws_per_psi, "predictive draws per parameter draw");
  pred->add_option("--thin", pred_args.thin, "stride through parameter draws");
  pred->add_flag("--map-only", pred_args.map_only, "predict from the MAP only (faster)");
  pred->add_option("--map-draws", pred_args.map_draws, "predictive draws in MAP mode");
  pred->add_option("--seed", pred_args.seed, "RNG seed");
  pred->add_option("--threads", pred_args.threads, "worker threads");
  pred->add_flag("--write-draws", pred_args.write_draws, "also write every predictive draw");
  pred->add_option("--out", pred_args.out_dir, "output directory");
  pred->add_flag("--force", pred_args.force, "overwrite existing outputs");
  pred->set_config("--config", "", "key=value configuration file (flags win)");

  EvaluateArgs eval_args;
  auto* eval = app.add_subcommand("evaluate", "cross-validated one-step-ahead calibration");
  attach_fit_flags(eval, eval_args.fit);
  eval->add_option("--folds", eval_args.folds, "cross-validation folds");
  eval->add_option("--bin-width", eval_args.bin_width, "age bin width in years");
  eval->add_option("--predictive-draws", eval_args.predictive_draws,
                   "predictive draws per parameter draw");
  eval->add_option("--thin", eval_args.thin, "stride through parameter draws");
  eval->add_flag("--map-only", eval_args.map_only, "predict from the MAP only");
  eval->add_option("--map-polish", eval_args.map_polish, "coordinate line-search steps on the MAP");
  eval->set_config("--config", "", "key=value configuration file (flags win)");

  try {
    app.parse(argc, argv);
    if (sim->parsed()) return run_simulate(sim_args);
    if (fit->parsed()) return run_fit(fit_args);
    if (bic_cmd->parsed()) return run_bic(bic_args);
    if (mem->parsed()) return run_membership(mem_args);
    if (pred->parsed()) return run_predict(pred_args);
    if (eval->parsed()) return run_evaluate(eval_args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
