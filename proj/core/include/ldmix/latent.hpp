#pragma once

// Structural side of the model: the cluster-specific disease-score predictor
// d(t) = -alpha0 + z(t)'alpha + theta(t), with theta a zero-mean Gaussian
// process under a squared-exponential kernel (unit scale, length-scale rho).

#include "ldmix/cohort.hpp"
#include "ldmix/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace ldmix {

struct StructuralParams {
  Eigen::VectorXd alpha;   // structural covariate coefficients (q)
  Eigen::VectorXd alpha0;  // cluster thresholds; alpha0[0] == 0, strictly increasing
  Eigen::VectorXd rho;     // per-cluster GP length-scale (> 0)
  Eigen::VectorXd lambda;  // cluster weights on the simplex

  int n_clusters() const { return static_cast<int>(alpha0.size()); }
};

/// g_s = -alpha0_ell + z_s' alpha over a subject's visit grid.
Eigen::VectorXd linear_predictor(const Subject& subject, int ell, const StructuralParams& s);

/// Cholesky factorization of the GP covariance over a time grid.  A graded
/// diagonal jitter (1e-10 up to 1e-6) is added only if the raw factorization
/// fails; beyond that the grid is reported as numerically degenerate.
struct GpFactor {
  Eigen::MatrixXd cov;               // matrix actually factored (jitter included)
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_det = 0.0;
  double jitter = 0.0;

  Eigen::Index dim() const { return cov.rows(); }
};

GpFactor gp_covariance(const Eigen::VectorXd& times, double rho);

/// Elementwise derivative of the kernel with respect to rho (no jitter).
Eigen::MatrixXd gp_cov_drho(const Eigen::VectorXd& times, double rho);

/// log N(theta; 0, K) using the factorization.
double gp_logpdf(const Eigen::VectorXd& theta, const GpFactor& gp);

/// Explicit inverse (small grids only; used by the Laplace Hessian).
Eigen::MatrixXd gp_inverse(const GpFactor& gp);

/// Draw from N(0, K).
Eigen::VectorXd gp_sample(const GpFactor& gp, Rng& rng);

/// Draw from N(mean, cov) for a general SPD covariance (tiny jitter retry).
Eigen::VectorXd mvn_sample(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng);

}  // namespace ldmix
