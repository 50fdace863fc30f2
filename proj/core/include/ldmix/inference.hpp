#pragma once

// Post-fit products: MAP extraction from the stored draws, BIC scoring and
// model selection over the cluster count, posterior cluster membership, and
// the resilience summary alpha0^(l) / alpha_t.  All summaries read draws from
// the chain picked by select_chain, matching how a fitted run is reported.

#include "ldmix/hmc.hpp"
#include "ldmix/posterior.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace ldmix {

struct MapEstimate {
  ParameterSet params;
  double log_posterior = 0.0;  // marginal (Laplace-mode) log f(psi | Y)
  int chain = 0;               // selected chain
  int draw = 0;                // argmax draw within that chain (pre-polish)
  int polish_steps = 0;        // line-search steps applied
};

/// Scans the selected chain for the draw maximizing the marginal log
/// posterior f(psi | Y) (ties -> first occurrence), then polishes it with
/// `polish_steps` coordinate-wise line searches in unconstrained space.
/// Steps that do not improve the objective are rejected, so the polished
/// value never falls below the best stored draw.
MapEstimate map_estimate(const PosteriorDraws& draws, const CohortData& cohort,
                         const ModelConfig& config, int polish_steps = 50, int threads = 1);

struct ModelScore {
  int L = 1;
  double map_log_posterior = 0.0;
  int dim_psi = 0;
  double bic = 0.0;
};

/// -2 log f(psi_hat | Y) + dim(psi) log N, N = subject count.
double bic_value(double map_log_posterior, int dim_psi, int n_subjects);

/// Scores a fitted model: evaluates the marginal log posterior at `map` and
/// assembles the BIC.  dim(psi) counts every free coordinate: lambda (L-1),
/// beta (K*p), gamma2 (K), gamma3 (K), mu_type (one per marker type present),
/// sigma (L*K), rho (L), alpha (q), alpha0 (L-1).
ModelScore bic(const ParameterSet& map, const CohortData& cohort, const ModelConfig& config);

/// argmin of bic over the candidate scores; ties resolved toward smaller L.
int select_L(const std::vector<ModelScore>& scores);

struct MembershipTable {
  std::vector<std::string> ids;
  Eigen::MatrixXd mean;          // n x L posterior-mean membership probabilities
  Eigen::MatrixXd lo;            // n x L, 2.5% quantile across draws
  Eigen::MatrixXd hi;            // n x L, 97.5% quantile across draws
  std::vector<int> assignment;   // argmax of the posterior-mean row
  int draws_used = 0;
  int draws_failed = 0;          // draws dropped because a Laplace solve failed
};

/// Per draw and subject, the cluster probabilities given the subject's full
/// history (lambda_l weighted by the Laplace marginal likelihood), aggregated
/// to posterior means and 95% intervals.  Draws where any Laplace solve fails
/// are excluded and counted in draws_failed.
MembershipTable membership(const PosteriorDraws& draws, const CohortData& cohort,
                           const ModelConfig& config, int threads = 1);

struct ResilienceSummary {
  std::vector<int> clusters;  // cluster labels covered, 2..L
  Eigen::VectorXd mean;       // posterior mean of alpha0^(l) / alpha_t
  Eigen::VectorXd lo;         // 2.5% quantile
  Eigen::VectorXd hi;         // 97.5% quantile
  bool in_years = false;
  double years_per_unit = 1.0;    // age sd used for the rescale
  bool alpha_t_unstable = false;  // 95% interval of alpha_t covers 0
};

/// Posterior mean and 95% interval of alpha0^(l) / alpha_t for each cluster
/// l >= 2, in standardized-time units, optionally rescaled to years by the
/// ingestion sidecar's age sd.  time_col names the structural covariate whose
/// coefficient is alpha_t (default "time").
ResilienceSummary resilience_summary(const PosteriorDraws& draws, const CohortData& cohort,
                                     const ModelConfig& config, bool in_years = false,
                                     const std::string& time_col = "time");

}  // namespace ldmix
