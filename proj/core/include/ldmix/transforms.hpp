#pragma once

// Bijection between the constrained parameter set psi and a flat unconstrained
// vector u suitable for HMC:
//
//   beta, gamma3, mu_type, alpha     identity
//   gamma2, sigma, rho               log
//   alpha0 (ell >= 2)                cumulative-sum-of-exp increments eta
//   lambda                           additive log-ratio, cluster L reference
//
// Every constrain call is accompanied by the log-Jacobian of u -> psi, and
// gradient chaining maps d/d(psi) accumulators into d/du including the
// Jacobian's own derivative.

#include "ldmix/latent.hpp"
#include "ldmix/measurement.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace ldmix {

struct ParameterSet {
  MeasurementParams measurement;
  StructuralParams structural;
};

/// Gradient accumulator in constrained coordinates, mirroring ParameterSet.
struct ConstrainedGrad {
  Eigen::MatrixXd beta;     // K x p
  Eigen::VectorXd gamma2;   // K
  Eigen::VectorXd gamma3;   // K
  Eigen::VectorXd mu_type;  // n_types
  Eigen::MatrixXd sigma;    // L x K
  Eigen::VectorXd alpha;    // q
  Eigen::VectorXd alpha0;   // L (entry 0 unused; alpha0^(1) is fixed at 0)
  Eigen::VectorXd rho;      // L
  Eigen::VectorXd lambda;   // L
};

class ParameterLayout {
 public:
  ParameterLayout() = default;
  ParameterLayout(int K, int p, int q, int L, int n_types);

  int n_markers() const { return K_; }
  int n_xcov() const { return p_; }
  int n_zcov() const { return q_; }
  int n_clusters() const { return L_; }
  int n_types() const { return n_types_; }
  /// Number of unconstrained coordinates (equals the free dimension of psi).
  int size() const { return n_; }

  // Block offsets into the unconstrained vector.
  int beta_offset() const { return off_beta_; }
  int gamma2_offset() const { return off_gamma2_; }
  int gamma3_offset() const { return off_gamma3_; }
  int mu_offset() const { return off_mu_; }
  int sigma_offset() const { return off_sigma_; }
  int alpha_offset() const { return off_alpha_; }
  int eta_offset() const { return off_eta_; }
  int rho_offset() const { return off_rho_; }
  int lambda_offset() const { return off_lambda_; }

  /// u -> psi.  gamma1 is fixed configuration, copied through.
  ParameterSet constrain(const Eigen::VectorXd& u, const Eigen::VectorXd& gamma1) const;

  /// psi -> u.  Validates invariants (positivity, ordering, simplex).
  Eigen::VectorXd unconstrain(const ParameterSet& params) const;

  /// log |d psi / d u| at u.
  double log_jacobian(const Eigen::VectorXd& u) const;

  /// Maps constrained-space gradients to d/du, adding d(log_jacobian)/du.
  /// `params` must equal constrain(u, .).
  Eigen::VectorXd chain_gradient(const Eigen::VectorXd& u, const ParameterSet& params,
                                 const ConstrainedGrad& g) const;

  ConstrainedGrad zero_grad() const;

  /// Constrained-space coordinate names in layout order, for reporting
  /// (e.g. "beta.k1.x0", "lambda.2").  type_names labels mu_type slots.
  std::vector<std::string> parameter_names(const std::vector<std::string>& type_names) const;

  /// Constrained values in layout order (the reporting counterpart of
  /// parameter_names): lambda and alpha0 are emitted in full constrained form
  /// (lambda_1..lambda_{L-1}, alpha0^(2..L)), positives on their natural scale.
  Eigen::VectorXd constrained_values(const ParameterSet& params) const;

 private:
  int K_ = 0, p_ = 0, q_ = 0, L_ = 0, n_types_ = 0;
  int off_beta_ = 0, off_gamma2_ = 0, off_gamma3_ = 0, off_mu_ = 0, off_sigma_ = 0;
  int off_alpha_ = 0, off_eta_ = 0, off_rho_ = 0, off_lambda_ = 0;
  int n_ = 0;
};

}  // namespace ldmix
