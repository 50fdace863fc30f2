#include "ldmix/latent.hpp"

#include "ldmix/math.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ldmix {

Eigen::VectorXd linear_predictor(const Subject& subject, int ell, const StructuralParams& s) {
  return (subject.z * s.alpha).array() - s.alpha0[ell];
}

namespace {

Eigen::MatrixXd kernel_matrix(const Eigen::VectorXd& times, double rho) {
  const Eigen::Index n = times.size();
  Eigen::MatrixXd k(n, n);
  const double inv = 1.0 / (2.0 * rho * rho);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double dt = times[i] - times[j];
      k(i, j) = k(j, i) = std::exp(-dt * dt * inv);
    }
  }
  return k;
}

}  // namespace

GpFactor gp_covariance(const Eigen::VectorXd& times, double rho) {
  if (times.size() == 0) throw std::invalid_argument("gp_covariance: empty time grid");
  if (!(rho > 0.0) || !std::isfinite(rho)) throw std::invalid_argument("gp_covariance: rho must be positive");

  const Eigen::MatrixXd base = kernel_matrix(times, rho);
  GpFactor out;
  for (double jitter : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
    out.cov = base;
    if (jitter > 0.0) out.cov.diagonal().array() += jitter;
    out.llt.compute(out.cov);
    if (out.llt.info() == Eigen::Success) {
      // Guard against near-singular factorizations LLT still "accepts".
      const auto diag = out.llt.matrixLLT().diagonal();
      if (diag.minCoeff() > 1e-9) {
        out.jitter = jitter;
        out.log_det = 2.0 * diag.array().log().sum();
        return out;
      }
    }
  }
  std::ostringstream msg;
  msg << "gp_covariance: grid numerically degenerate at rho=" << rho << " for times [";
  for (Eigen::Index i = 0; i < times.size(); ++i) msg << (i ? ", " : "") << times[i];
  msg << "]";
  throw std::runtime_error(msg.str());
}

Eigen::MatrixXd gp_cov_drho(const Eigen::VectorXd& times, double rho) {
  const Eigen::Index n = times.size();
  Eigen::MatrixXd d(n, n);
  const double inv = 1.0 / (2.0 * rho * rho);
  const double rho3 = rho * rho * rho;
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double dt2 = (times[i] - times[j]) * (times[i] - times[j]);
      d(i, j) = d(j, i) = std::exp(-dt2 * inv) * dt2 / rho3;
    }
  }
  return d;
}

double gp_logpdf(const Eigen::VectorXd& theta, const GpFactor& gp) {
  if (theta.size() != gp.dim()) throw std::invalid_argument("gp_logpdf: dimension mismatch");
  const double quad = theta.dot(gp.llt.solve(theta));
  return -0.5 * (static_cast<double>(gp.dim()) * log_2pi + gp.log_det + quad);
}

Eigen::MatrixXd gp_inverse(const GpFactor& gp) {
  return gp.llt.solve(Eigen::MatrixXd::Identity(gp.dim(), gp.dim()));
}

Eigen::VectorXd gp_sample(const GpFactor& gp, Rng& rng) {
  return gp.llt.matrixL() * rng.normal_vector(gp.dim());
}

Eigen::VectorXd mvn_sample(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng) {
  if (mean.size() != cov.rows() || cov.rows() != cov.cols())
    throw std::invalid_argument("mvn_sample: shape mismatch");
  for (double jitter : {0.0, 1e-12, 1e-10, 1e-8}) {
    Eigen::MatrixXd c = cov;
    if (jitter > 0.0) c.diagonal().array() += jitter * std::max(1.0, cov.diagonal().maxCoeff());
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() == Eigen::Success)
      return mean + Eigen::VectorXd(llt.matrixL() * rng.normal_vector(mean.size()));
  }
  throw std::runtime_error("mvn_sample: covariance not positive definite");
}

}  // namespace ldmix
