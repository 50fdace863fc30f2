#pragma once

// Self-contained static-path Hamiltonian Monte Carlo with dual-averaging step
// size adaptation, windowed diagonal mass adaptation, divergence flagging, and
// split-R-hat / effective-sample-size diagnostics.  The sampler sees only an
// abstract differentiable target, so calibration tests can run it on known
// densities.

#include "ldmix/posterior.hpp"
#include "ldmix/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ldmix {

struct HmcTarget {
  int dim = 0;
  /// Returns log density (up to a constant) and fills the gradient.  A return
  /// of -inf marks the point as out of support (gradient then ignored).
  std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)> value_and_grad;
};

struct SamplerConfig {
  int chains = 2;
  int warmup = 1000;
  int draws = 1000;
  double target_accept = 0.8;
  int max_leapfrog = 1024;
  std::uint64_t seed = 1;
  /// Base integration path length; per-iteration step counts are jittered
  /// uniformly in [0.8, 1.2] x (path_length / step_size).
  double path_length = 1.2;
  double init_jitter = 0.5;  // uniform(-j, j) initialization of coordinates
  int threads = 1;
  bool store_latent = false;  // keep theta draws alongside parameter draws
};

struct LeapfrogResult {
  Eigen::VectorXd u;
  Eigen::VectorXd p;
  double energy_error = 0.0;  // H(end) - H(start)
  bool finite = true;
  double value = 0.0;         // target value at the end point
  Eigen::VectorXd grad;       // gradient at the end point
};

/// Standard position/momentum leapfrog under a diagonal mass matrix given by
/// inv_mass (kinetic energy = 1/2 p' inv_mass p).
LeapfrogResult leapfrog(const HmcTarget& target, const Eigen::VectorXd& u, const Eigen::VectorXd& p,
                        double step, int n_steps, const Eigen::VectorXd& inv_mass);

struct ChainResult {
  Eigen::MatrixXd draws;             // n_draws x n_report (constrained values)
  Eigen::VectorXd lp;                // target value per kept draw
  std::vector<std::uint8_t> divergent;
  int n_divergences = 0;
  double accept_rate = 0.0;          // mean Metropolis acceptance, sampling phase
  double step_size = 0.0;            // adapted step size
  Eigen::VectorXd inv_mass;
  Eigen::VectorXd last_u;            // final unconstrained state
  Eigen::MatrixXd latent;            // theta draws when store_latent is set
};

/// One HMC chain over an arbitrary target.  `report` maps the unconstrained
/// state to the stored row (defaults to identity).
ChainResult run_hmc(const HmcTarget& target, const SamplerConfig& config, Rng rng,
                    const Eigen::VectorXd& init,
                    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& report = {});

struct PosteriorDraws {
  std::vector<ChainResult> chains;
  std::vector<std::string> names;  // reported (constrained) parameter names
  Eigen::VectorXd rhat;            // per reported parameter, across chains
  Eigen::VectorXd ess;
  int n_clusters = 1;

  int n_draws_per_chain() const {
    return chains.empty() ? 0 : static_cast<int>(chains.front().draws.rows());
  }
};

/// Samples the JOINT-mode posterior: one chain per RNG substream, each storing
/// constrained parameter values (theta coordinates are sampled but not kept).
PosteriorDraws run_chains(const CohortData& cohort, const ModelConfig& config,
                          const SamplerConfig& sampler);

/// Split R-hat (each chain halved) per column of the stored draws.
Eigen::VectorXd split_rhat(const std::vector<ChainResult>& chains);

/// Effective sample size per column via Geyer's initial positive sequence.
Eigen::VectorXd effective_sample_size(const std::vector<ChainResult>& chains);

/// The paper's three chain-selection criteria: prefer chains without
/// divergences, then without boundary degeneracy (some posterior-mean
/// lambda below 0.01), then the larger mean log posterior.  Returns the
/// selected chain index; `reason` (optional) explains the choice.
int select_chain(const PosteriorDraws& draws, std::string* reason = nullptr);

/// Rebuilds the full parameter set from one stored draw row.
ParameterSet params_from_row(const Eigen::VectorXd& row, const ModelConfig& config);

}  // namespace ldmix
