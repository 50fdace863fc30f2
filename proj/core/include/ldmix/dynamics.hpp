#pragma once

// Dynamic products built on the Laplace machinery: time-evolving cluster
// probabilities from partial histories, forward trajectory prediction over a
// data-free horizon, and the cross-validated one-step-ahead evaluation that
// yields the MAE / coverage table by age bin.

#include "ldmix/hmc.hpp"
#include "ldmix/inference.hpp"
#include "ldmix/posterior.hpp"
#include "ldmix/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace ldmix {

/// P(cluster = l | Y_{1:j}) for one subject under fixed parameters: the
/// Laplace log normalizer per cluster combined with log lambda through
/// log-sum-exp.  j = 0 is allowed and returns lambda (no data).  A Laplace
/// failure is rethrown naming (subject, cluster, j).
Eigen::VectorXd cluster_probability(const Subject& subject, int history_len,
                                    const ParameterSet& params, const ModelConfig& config,
                                    const CensoringSpec& censoring);

/// Per-draw cluster probabilities at every history length j = 1..J.
struct ClusterTrajectory {
  std::vector<int> history_len;        // j values, 1..J
  std::vector<Eigen::MatrixXd> probs;  // per j: draws_used x L
  int draws_used = 0;
  int draws_failed = 0;
};

/// Runs cluster_probability over the selected chain's parameter draws
/// (optionally thinned) for each history length.  Draws whose Laplace solve
/// fails anywhere are dropped and counted.
ClusterTrajectory cluster_trajectory(const Subject& subject, const PosteriorDraws& draws,
                                     const ModelConfig& config, const CensoringSpec& censoring,
                                     int thin = 1, int threads = 1);

/// Horizon grid for prediction: future times (standardized) and the
/// measurement / structural covariate rows at those times.
struct Horizon {
  Eigen::VectorXd times;
  Eigen::MatrixXd x;  // n_h x p
  Eigen::MatrixXd z;  // n_h x q
};

/// Builds the default horizon: reserved covariate columns are synthesized
/// ("intercept" = 1, "time" = the horizon time); every other column carries
/// the last history row forward (zero when history_len = 0).
Horizon default_horizon(const Subject& subject, int history_len, const Eigen::VectorXd& times,
                        const CohortSchema& schema);

struct TrajectoryDraws {
  Eigen::VectorXd times;           // horizon grid
  std::vector<Eigen::MatrixXd> y;  // per draw: n_h x K simulated panel
  std::vector<int> cluster;        // cluster label drawn per draw
  Eigen::VectorXd q_hat;           // cluster probabilities given the history
  int psi_draws_failed = 0;        // parameter draws dropped (per-draw mode)
};

/// Appendix-3 posterior predictive under fixed parameters: draw the cluster
/// label from q_hat, draw theta over history + horizon from the extended
/// Laplace Gaussian, and simulate Y at the horizon rows from the measurement
/// model.  Simulated values are clipped to the detection bounds so draws live
/// on the same censored scale as observations.
TrajectoryDraws predict_trajectory(const Subject& subject, int history_len, const Horizon& horizon,
                                   const ParameterSet& params, const ModelConfig& config,
                                   const CensoringSpec& censoring, int n_draws, Rng& rng);

/// Per-draw execution over the selected chain: for every stored parameter
/// draw (optionally thinned), runs predict_trajectory with draws_per_psi
/// predictive draws and concatenates.  q_hat is averaged over parameter
/// draws; draws whose Laplace solve fails are skipped and counted.
TrajectoryDraws predict_over_draws(const Subject& subject, int history_len, const Horizon& horizon,
                                   const PosteriorDraws& draws, const ModelConfig& config,
                                   const CensoringSpec& censoring, int draws_per_psi, Rng& rng,
                                   int thin = 1);

struct TrajectorySummary {
  Eigen::VectorXd times;
  Eigen::MatrixXd mean;  // n_h x K
  Eigen::MatrixXd lo;    // 2.5% quantile
  Eigen::MatrixXd hi;    // 97.5% quantile
};

TrajectorySummary summarize_trajectory(const TrajectoryDraws& draws);

/// One evaluated one-step-ahead prediction: subject, raw age of the target
/// visit, marker, observed value, and the predictive summary.
struct PredictionRecord {
  std::string id;
  double age = 0.0;  // raw years at the predicted visit
  int marker = 0;
  double observed = 0.0;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool covered = false;
};

struct PredictiveSummary {
  std::vector<PredictionRecord> records;
  Eigen::VectorXd bin_lo;    // age bin edges, raw years
  Eigen::VectorXd bin_hi;
  Eigen::VectorXi bin_n;     // observations per bin
  Eigen::VectorXd mae;       // per bin
  Eigen::VectorXd coverage;  // per bin
  double overall_mae = 0.0;
  double overall_coverage = 0.0;
  int n_predictions = 0;
  int psi_draws_failed = 0;
};

/// Aggregates records into age bins of the given width (edges anchored at
/// multiples of the width); empty bins between occupied ones are kept.
void bin_records(PredictiveSummary& summary, double bin_width);

struct CvConfig {
  int folds = 5;
  std::uint64_t seed = 1;
  double age_bin_width = 5.0;  // raw years
  SamplerConfig sampler;       // per-fold fit settings
  bool map_only = false;       // predict from the MAP instead of per draw
  int predictive_draws = 1;    // per parameter draw (total draws when map_only)
  int map_polish = 50;
  int thin = 1;                // stride through stored parameter draws
  int threads = 1;
};

/// Subject-level k-fold cross-validation: fit on the training folds, then,
/// for every held-out subject and every history length j, predict visit j+1
/// and score |posterior-mean - observed| and 95%-interval coverage for each
/// observed marker, aggregated by age bin.  Fold assignment is a seeded
/// shuffle, so results are reproducible from (cohort, config, cv).
PredictiveSummary evaluate_cv(const CohortData& cohort, const ModelConfig& config,
                              const CvConfig& cv);

}  // namespace ldmix
