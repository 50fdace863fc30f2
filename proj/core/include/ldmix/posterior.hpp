#pragma once

// Priors, model configuration, and the full log posterior.  Two likelihood
// modes share the same parameter block:
//
//   JointPosterior    — latent paths theta are explicit coordinates; the
//                       cluster label is marginalized per subject by
//                       log-sum-exp.  Exact and differentiable: this is the
//                       HMC target.
//   MarginalPosterior — theta integrated out per (subject, cluster) by the
//                       Laplace approximation.  Used for MAP/BIC scoring,
//                       membership, and prediction, where the paper's
//                       appendix machinery applies.

#include "ldmix/cohort.hpp"
#include "ldmix/laplace.hpp"
#include "ldmix/math.hpp"
#include "ldmix/transforms.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace ldmix {

struct PriorConfig {
  double beta_var = 100.0;       // beta ~ N(0, 100)
  double sigma_shape = 0.01;     // sigma ~ InvGamma(0.01, 0.01)
  double sigma_scale = 0.01;
  double alpha_sd = 1.0;         // alpha ~ N(0, 1)
  double gamma2_shape = 3.0;     // gamma2 ~ Gamma(3, rate 1)
  double gamma2_rate = 1.0;
  double gamma3_sd = 1.0;        // gamma3_k ~ N(mu_type(k), 1)
  double mu_type_var = 4.0;      // mu_type ~ N(0, 4)
  double alpha0_shape = 2.0;     // alpha0^(l), l >= 2 ~ Gamma(2, rate 1.5)
  double alpha0_rate = 1.5;
  double rho_a = quiet_nan();    // solved from the visit-span interval unless set
  double rho_b = quiet_nan();
  double rho_interval_lo = quiet_nan();  // optional override of [min, max] span
  double rho_interval_hi = quiet_nan();
};

/// Solves for (a, b) such that InvGamma(a, b) puts 1% mass below delta_min and
/// 1% above delta_max (the symmetric 98% interval condition).  Bisection in
/// the shape a with b matched to the lower quantile at each trial.
/// Throws std::invalid_argument when no solution brackets.
std::pair<double, double> solve_rho_hyperparams(double delta_min, double delta_max);

struct ModelConfig {
  int n_clusters = 1;
  Eigen::VectorXd gamma1;                 // fixed sigmoid asymptotes (K)
  std::vector<MarkerType> marker_types;   // K
  std::vector<MarkerType> type_slots;     // distinct types, canonical order
  std::vector<std::string> type_slot_names;
  std::vector<int> type_slot_of;          // K -> slot index
  PriorConfig prior;                      // with rho_a/rho_b resolved
  ParameterLayout layout;
};

/// Derives type slots and the layout from the cohort, and resolves the rho
/// prior: explicit (a, b) win, then an explicit interval, then the cohort's
/// visit-span interval.  gamma1 empty means "all ones".
ModelConfig make_model_config(const CohortData& cohort, int n_clusters, Eigen::VectorXd gamma1,
                              PriorConfig prior = {});

/// Sum of all prior log-densities at params (constrained space, no Jacobian).
double log_prior(const ParameterSet& params, const ModelConfig& config);

/// Adds d(log_prior)/d(psi) into the accumulator.
void accumulate_prior_grad(const ParameterSet& params, const ModelConfig& config, ConstrainedGrad& g);

/// Deterministic central-difference gradient with fixed step 1e-6, for
/// targets without closed-form derivatives (and for checking those with).
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& u, double step = 1e-6);

/// HMC target over parameters plus per-subject latent paths.  The latent
/// blocks are whitened: the sampler's coordinates are w ~ N(0, I) and the
/// cluster-l path is theta = chol(D(rho_l)) w.  The squared-exponential
/// kernel is nearly singular whenever rho exceeds the visit spacing, so the
/// centered theta-coordinates would carry prior curvature up to 1/eigmin(D);
/// whitening moves that ill-conditioning out of the sampled space entirely
/// and leaves a unit-curvature prior, at the cost of a Cholesky derivative
/// in the rho gradient.
class JointPosterior {
 public:
  JointPosterior(const CohortData& cohort, const ModelConfig& config, int threads = 1);

  const ModelConfig& config() const { return config_; }
  const CohortData& cohort() const { return *cohort_; }
  const ParameterLayout& layout() const { return config_.layout; }
  int n_params() const { return config_.layout.size(); }
  /// Offset of subject i's whitened latent block (clusters stacked, J_i
  /// entries each); theta for cluster l is chol(D_l) times that segment.
  int theta_offset(int i) const { return theta_off_[static_cast<std::size_t>(i)]; }
  /// Total coordinate count: parameters plus all theta blocks.
  int dim() const { return dim_; }

  /// log posterior density in u-coordinates (log-Jacobian included).
  /// Returns -inf instead of throwing when the value is not finite, so the
  /// sampler can treat the proposal as divergent.
  double value(const Eigen::VectorXd& u) const;
  double value_and_grad(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const;

  ParameterSet params_of(const Eigen::VectorXd& u) const {
    return config_.layout.constrain(u.head(n_params()), config_.gamma1);
  }

 private:
  struct GridGroup {
    Eigen::VectorXd times;
    std::vector<int> subjects;
  };
  struct GpBundle {
    GpFactor gp;
    Eigen::MatrixXd chol;   // lower Cholesky factor of the (jittered) kernel
    Eigen::MatrixXd dchol;  // d chol / d rho, via dC = C Phi(C^-1 dD C^-T)
  };

  double evaluate(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const;

  const CohortData* cohort_;
  ModelConfig config_;
  int threads_;
  std::vector<int> theta_off_;
  int dim_ = 0;
  std::vector<GridGroup> grids_;
  std::vector<int> grid_of_;  // subject -> grid group
};

class MarginalPosterior {
 public:
  MarginalPosterior(const CohortData& cohort, const ModelConfig& config, int threads = 1);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return config_.layout; }

  /// n x L matrix of per-subject, per-cluster Laplace log normalizers.
  /// Throws std::runtime_error naming (subject, cluster) on failure.
  Eigen::MatrixXd subject_cluster_lognorm(const ParameterSet& params) const;

  /// sum_i logsumexp_l { log lambda_l + log p_hat_il }.
  double mixture_loglik(const ParameterSet& params) const;

  /// mixture_loglik + log_prior: the density f(psi | Y) maximized by the MAP
  /// and plugged into BIC.
  double value_params(const ParameterSet& params) const;

  /// Same in u-coordinates, log-Jacobian included.
  double value(const Eigen::VectorXd& u) const;

  /// Central-difference gradient of value(u) (step 1e-6).
  Eigen::VectorXd grad_fd(const Eigen::VectorXd& u) const;

 private:
  const CohortData* cohort_;
  ModelConfig config_;
  int threads_;
};

}  // namespace ldmix
