#pragma once

// Laplace approximation of the per-subject, per-cluster integral over the
// latent disease-score path theta:
//
//   Z = integral  exp{ loglik(Y | theta) } N(theta; 0, D) dtheta
//     ~ (2 pi)^{T/2} |Sigma|^{1/2} h(theta_hat),
//
// where h is the unnormalized integrand, theta_hat its mode (found by damped
// Newton), and Sigma = (-Hess log h)^{-1} at the mode.  The grid may extend
// past the observed visits (rows without data), which is how dynamic
// prediction reuses the same machinery.

#include "ldmix/cohort.hpp"
#include "ldmix/latent.hpp"
#include "ldmix/measurement.hpp"

#include <Eigen/Dense>

namespace ldmix {

struct LaplaceProblem {
  Eigen::VectorXd times;  // full grid (history then horizon), standardized
  Eigen::VectorXd g;      // structural predictor -alpha0 + z'alpha over the grid
  int t_data = 0;         // leading rows that can carry observations
  Eigen::MatrixXd y;      // t_data x K
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> observed;
  Eigen::MatrixXd x;      // t_data x p
  int cluster = 0;
  const MeasurementParams* meas = nullptr;
  const CensoringSpec* censoring = nullptr;
  GpFactor gp;             // prior covariance D over the grid
  Eigen::MatrixXd gp_inv;  // D^{-1}

  Eigen::Index dim() const { return times.size(); }
};

/// Assembles a problem from the first `n_history` visits of a subject plus an
/// optional data-free horizon (future times with structural covariates).
LaplaceProblem make_laplace_problem(const Subject& subject, int n_history,
                                    const Eigen::VectorXd& future_times,
                                    const Eigen::MatrixXd& future_z, int cluster,
                                    const MeasurementParams& meas, const StructuralParams& strct,
                                    const CensoringSpec& censoring);

/// Full-history problem with no horizon.
LaplaceProblem make_laplace_problem(const Subject& subject, int cluster,
                                    const MeasurementParams& meas, const StructuralParams& strct,
                                    const CensoringSpec& censoring);

/// log h(theta) = conditional log-likelihood + GP log-density.
double log_h(const LaplaceProblem& p, const Eigen::VectorXd& theta);

/// Per-grid-row observation terms: a[s] = d(loglik)/d(theta_s) and
/// curv[s] = d a[s] / d(theta_s).  Either output may be null.
void data_terms(const LaplaceProblem& p, const Eigen::VectorXd& theta, Eigen::VectorXd* a,
                Eigen::VectorXd* curv);

Eigen::VectorXd grad_log_h(const LaplaceProblem& p, const Eigen::VectorXd& theta);

/// diag(curv) - D^{-1}; dense because the GP couples all grid rows.
Eigen::MatrixXd hess_log_h(const LaplaceProblem& p, const Eigen::VectorXd& theta);

struct LaplaceResult {
  Eigen::VectorXd mode;
  Eigen::MatrixXd cov;        // Sigma, the negative inverse Hessian at the mode
  double log_det_cov = 0.0;
  double log_h_mode = 0.0;
  double log_normalizer = 0.0;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
  bool used_stabilized = false;  // Sigma via D (U^{-1} + D)^{-1} U^{-1}
};

/// Damped Newton ascent on log h (backtracking line search, ridge fallback on
/// indefinite Hessians), then the Gaussian integral.  Stops at max-norm
/// gradient < 1e-8 or 100 iterations.  Throws std::runtime_error if the
/// curvature at the mode is not positive definite.
LaplaceResult laplace_approximate(const LaplaceProblem& p, const Eigen::VectorXd* warm_start = nullptr);

inline LaplaceResult find_mode(const LaplaceProblem& p, const Eigen::VectorXd& theta_init) {
  return laplace_approximate(p, &theta_init);
}

/// (t/2) log 2pi + 1/2 log|Sigma| + log h(theta_hat), assembled from a result.
double log_normalizer(const LaplaceResult& r, Eigen::Index t);

}  // namespace ldmix
