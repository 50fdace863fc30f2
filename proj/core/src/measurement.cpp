#include "ldmix/measurement.hpp"

#include "ldmix/math.hpp"

#include <cmath>
#include <stdexcept>

namespace ldmix {

double censored_normal_logpdf(double y, double mu, double sigma, const CensorRule& rule) {
  if (!(sigma > 0.0)) throw std::invalid_argument("censored_normal_logpdf: sigma must be positive");
  if (rule.censors(y)) {
    const double z = (rule.bound - mu) / sigma;
    return rule.side == CensorSide::ceiling ? std_normal_logtail(z) : std_normal_logcdf(z);
  }
  return normal_logpdf(y, mu, sigma);
}

double conditional_loglik(const Subject& subject, const Eigen::VectorXd& d, int ell,
                          const MeasurementParams& m, const CensoringSpec& censoring) {
  if (d.size() != subject.times.size())
    throw std::invalid_argument("conditional_loglik: disease-score path length mismatch");
  const int J = subject.n_visits();
  const int K = m.n_markers();
  double ll = 0.0;
  for (int j = 0; j < J; ++j) {
    const Eigen::RowVectorXd xj = subject.x.row(j);
    for (int k = 0; k < K; ++k) {
      if (!subject.observed(j, k)) continue;
      const double mu = biomarker_mean(xj, d[j], k, m);
      ll += censored_normal_logpdf(subject.y(j, k), mu, m.sigma(ell, k), censoring.rule(k));
    }
  }
  return ll;
}

double subject_conditional_loglik(const Subject& subject, const Eigen::VectorXd& theta, int ell,
                                  const MeasurementParams& m, const StructuralParams& s,
                                  const CensoringSpec& censoring) {
  const Eigen::VectorXd d = linear_predictor(subject, ell, s) + theta;
  return conditional_loglik(subject, d, ell, m, censoring);
}

}  // namespace ldmix
