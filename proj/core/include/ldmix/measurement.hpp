#pragma once

// Measurement side of the model: each biomarker k follows a Gaussian around
// x(t)'beta_k + h_k(d), where h_k is a sigmoid in the disease score d whose
// asymptote gamma1_k is fixed for identifiability, and where a per-marker
// detection bound may convert density into one-sided interval mass.

#include "ldmix/cohort.hpp"
#include "ldmix/latent.hpp"

#include <Eigen/Dense>

namespace ldmix {

struct MeasurementParams {
  Eigen::MatrixXd beta;     // K x p covariate coefficients, shared across clusters
  Eigen::VectorXd gamma1;   // K sigmoid asymptotes (fixed, not sampled)
  Eigen::VectorXd gamma2;   // K sigmoid slopes (> 0)
  Eigen::VectorXd gamma3;   // K sigmoid inflection points
  Eigen::VectorXd mu_type;  // hierarchical means of gamma3, one per marker type present
  Eigen::MatrixXd sigma;    // L x K residual standard deviations (> 0)

  int n_markers() const { return static_cast<int>(gamma1.size()); }
  int n_clusters() const { return static_cast<int>(sigma.rows()); }
};

/// Numerically stable logistic function.
inline double logistic(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

/// h(d) = g1 / (1 + exp(-g2 (d - g3))).
inline double sigmoid_shift(double d, double g1, double g2, double g3) {
  return g1 * logistic(g2 * (d - g3));
}
inline double sigmoid_shift(double d, int k, const MeasurementParams& m) {
  return sigmoid_shift(d, m.gamma1[k], m.gamma2[k], m.gamma3[k]);
}

/// Model mean for biomarker k at covariates x and disease score d.
inline double biomarker_mean(const Eigen::RowVectorXd& x, double d, int k, const MeasurementParams& m) {
  return x.dot(m.beta.row(k)) + sigmoid_shift(d, k, m);
}

/// Log-density of one observation: Gaussian inside the detection range,
/// one-sided tail mass at (or beyond) the bound.
double censored_normal_logpdf(double y, double mu, double sigma, const CensorRule& rule);

/// Sum of censored_normal_logpdf over a subject's observed panel, given the
/// disease-score path d (one entry per visit) for cluster ell.
double conditional_loglik(const Subject& subject, const Eigen::VectorXd& d, int ell,
                          const MeasurementParams& m, const CensoringSpec& censoring);

/// Same, with d assembled from the structural model and latent path theta.
double subject_conditional_loglik(const Subject& subject, const Eigen::VectorXd& theta, int ell,
                                  const MeasurementParams& m, const StructuralParams& s,
                                  const CensoringSpec& censoring);

}  // namespace ldmix
