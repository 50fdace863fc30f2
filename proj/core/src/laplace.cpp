#include "ldmix/laplace.hpp"

#include "ldmix/math.hpp"

#include <cmath>
#include <stdexcept>

namespace ldmix {

LaplaceProblem make_laplace_problem(const Subject& subject, int n_history,
                                    const Eigen::VectorXd& future_times,
                                    const Eigen::MatrixXd& future_z, int cluster,
                                    const MeasurementParams& meas, const StructuralParams& strct,
                                    const CensoringSpec& censoring) {
  if (n_history < 0 || n_history > subject.n_visits())
    throw std::invalid_argument("make_laplace_problem: history length out of range");
  if (future_times.size() > 0 && future_z.rows() != future_times.size())
    throw std::invalid_argument("make_laplace_problem: horizon covariates do not match horizon grid");

  const Eigen::Index t_hist = n_history;
  const Eigen::Index t_fut = future_times.size();
  LaplaceProblem p;
  p.times.resize(t_hist + t_fut);
  p.times.head(t_hist) = subject.times.head(t_hist);
  if (t_fut > 0) p.times.tail(t_fut) = future_times;
  for (Eigen::Index s = 1; s < p.times.size(); ++s)
    if (!(p.times[s] > p.times[s - 1]))
      throw std::invalid_argument("make_laplace_problem: grid times not strictly increasing");

  p.g.resize(t_hist + t_fut);
  p.g.head(t_hist) = (subject.z.topRows(t_hist) * strct.alpha).array() - strct.alpha0[cluster];
  if (t_fut > 0) p.g.tail(t_fut) = (future_z * strct.alpha).array() - strct.alpha0[cluster];

  p.t_data = n_history;
  p.y = subject.y.topRows(t_hist);
  p.observed = subject.observed.topRows(t_hist);
  p.x = subject.x.topRows(t_hist);
  p.cluster = cluster;
  p.meas = &meas;
  p.censoring = &censoring;
  p.gp = gp_covariance(p.times, strct.rho[cluster]);
  p.gp_inv = gp_inverse(p.gp);
  return p;
}

LaplaceProblem make_laplace_problem(const Subject& subject, int cluster,
                                    const MeasurementParams& meas, const StructuralParams& strct,
                                    const CensoringSpec& censoring) {
  return make_laplace_problem(subject, subject.n_visits(), Eigen::VectorXd(),
                              Eigen::MatrixXd(0, subject.z.cols()), cluster, meas, strct, censoring);
}

double log_h(const LaplaceProblem& p, const Eigen::VectorXd& theta) {
  const MeasurementParams& m = *p.meas;
  const int K = m.n_markers();
  double ll = 0.0;
  for (int j = 0; j < p.t_data; ++j) {
    const double d = p.g[j] + theta[j];
    for (int k = 0; k < K; ++k) {
      if (!p.observed(j, k)) continue;
      const double mu = p.x.row(j).dot(m.beta.row(k)) + sigmoid_shift(d, k, m);
      ll += censored_normal_logpdf(p.y(j, k), mu, m.sigma(p.cluster, k), p.censoring->rule(k));
    }
  }
  return ll + gp_logpdf(theta, p.gp);
}

void data_terms(const LaplaceProblem& p, const Eigen::VectorXd& theta, Eigen::VectorXd* a,
                Eigen::VectorXd* curv) {
  const MeasurementParams& m = *p.meas;
  const int K = m.n_markers();
  if (a) a->setZero(p.dim());
  if (curv) curv->setZero(p.dim());
  for (int j = 0; j < p.t_data; ++j) {
    const double d = p.g[j] + theta[j];
    for (int k = 0; k < K; ++k) {
      if (!p.observed(j, k)) continue;
      const double g1 = m.gamma1[k], g2 = m.gamma2[k], g3 = m.gamma3[k];
      const double sg = m.sigma(p.cluster, k);
      const double S = logistic(g2 * (d - g3));
      const double B = S * (1.0 - S);
      const double hp = g1 * g2 * B;               // d mu / d theta_j
      const double hpp = g1 * g2 * g2 * B * (1.0 - 2.0 * S);
      const double mu = p.x.row(j).dot(m.beta.row(k)) + g1 * S;

      double dll_dmu, d2ll_dmu2;
      const CensorRule& rule = p.censoring->rule(k);
      if (rule.censors(p.y(j, k))) {
        const double z = (rule.bound - mu) / sg;
        if (rule.side == CensorSide::ceiling) {
          // hazard of the right tail; d/dz log(1 - Phi) = -r, r' = r (r - z)
          const double r = std::exp(std_normal_logpdf(z) - std_normal_logtail(z));
          dll_dmu = r / sg;
          d2ll_dmu2 = -r * (r - z) / (sg * sg);
        } else {
          // left tail; d/dz log Phi = r, r' = -r (z + r)
          const double r = std::exp(std_normal_logpdf(z) - std_normal_logcdf(z));
          dll_dmu = -r / sg;
          d2ll_dmu2 = -r * (z + r) / (sg * sg);
        }
      } else {
        const double A = p.y(j, k) - mu;
        dll_dmu = A / (sg * sg);
        d2ll_dmu2 = -1.0 / (sg * sg);
      }
      if (a) (*a)[j] += dll_dmu * hp;
      if (curv) (*curv)[j] += d2ll_dmu2 * hp * hp + dll_dmu * hpp;
    }
  }
}

Eigen::VectorXd grad_log_h(const LaplaceProblem& p, const Eigen::VectorXd& theta) {
  Eigen::VectorXd a;
  data_terms(p, theta, &a, nullptr);
  return a - p.gp_inv * theta;
}

Eigen::MatrixXd hess_log_h(const LaplaceProblem& p, const Eigen::VectorXd& theta) {
  Eigen::VectorXd curv;
  data_terms(p, theta, nullptr, &curv);
  Eigen::MatrixXd h = -p.gp_inv;
  h.diagonal() += curv;
  return h;
}

namespace {

/// Newton direction for maximizing log h: solves (-H + tau I) delta = grad,
/// escalating the ridge tau until the factorization succeeds.
Eigen::VectorXd ascent_direction(const Eigen::MatrixXd& neg_hess, const Eigen::VectorXd& grad) {
  for (double tau : {0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2}) {
    Eigen::MatrixXd m = neg_hess;
    if (tau > 0.0) m.diagonal().array() += tau;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return llt.solve(grad);
  }
  return grad;  // steepest ascent as a last resort
}

}  // namespace

LaplaceResult laplace_approximate(const LaplaceProblem& p, const Eigen::VectorXd* warm_start) {
  const Eigen::Index T = p.dim();
  LaplaceResult out;
  out.mode = warm_start ? *warm_start : Eigen::VectorXd::Zero(T);
  if (warm_start && warm_start->size() != T)
    throw std::invalid_argument("laplace_approximate: warm start has wrong dimension");

  double f = log_h(p, out.mode);
  if (!std::isfinite(f)) {
    out.mode.setZero();
    f = log_h(p, out.mode);
  }

  Eigen::VectorXd a(T), curv(T), grad(T);
  for (int it = 0; it < 100; ++it) {
    data_terms(p, out.mode, &a, &curv);
    grad = a - p.gp_inv * out.mode;
    out.grad_norm = grad.lpNorm<Eigen::Infinity>();
    if (out.grad_norm < 1e-8) {
      out.converged = true;
      break;
    }
    out.iterations = it + 1;

    Eigen::MatrixXd neg_hess = p.gp_inv;
    neg_hess.diagonal() -= curv;
    const Eigen::VectorXd delta = ascent_direction(neg_hess, grad);

    double step = 1.0;
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      const Eigen::VectorXd cand = out.mode + step * delta;
      const double fc = log_h(p, cand);
      if (std::isfinite(fc) && fc > f) {
        out.mode = cand;
        f = fc;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;  // line search exhausted; report current point
  }

  data_terms(p, out.mode, &a, &curv);
  grad = a - p.gp_inv * out.mode;
  out.grad_norm = grad.lpNorm<Eigen::Infinity>();
  out.converged = out.grad_norm < 1e-8;
  out.log_h_mode = f;

  // Curvature at the mode: -H = U + D^{-1} with U = -diag(curv).
  Eigen::MatrixXd neg_hess = p.gp_inv;
  neg_hess.diagonal() -= curv;

  bool have_cov = false;
  Eigen::LLT<Eigen::MatrixXd> llt(neg_hess);
  if (llt.info() == Eigen::Success) {
    const auto ldiag = llt.matrixLLT().diagonal();
    const double cond = (ldiag.maxCoeff() / ldiag.minCoeff());
    if (ldiag.minCoeff() > 0.0 && cond * cond < 1e12) {
      out.cov = llt.solve(Eigen::MatrixXd::Identity(T, T));
      out.log_det_cov = -2.0 * ldiag.array().log().sum();
      have_cov = true;
    }
  }
  if (!have_cov) {
    // Stabilized inversion Sigma = D (U^{-1} + D)^{-1} U^{-1}; requires every
    // grid row to carry data curvature, which prediction horizons do not.
    const Eigen::VectorXd u = -curv;
    if (u.array().abs().minCoeff() > 1e-12) {
      const Eigen::MatrixXd u_inv = u.cwiseInverse().asDiagonal();
      const Eigen::MatrixXd m = u_inv + p.gp.cov;
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
      out.cov = p.gp.cov * lu.solve(u_inv);
      out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
      Eigen::LLT<Eigen::MatrixXd> cov_llt(out.cov);
      if (cov_llt.info() == Eigen::Success) {
        out.log_det_cov = 2.0 * cov_llt.matrixLLT().diagonal().array().log().sum();
        out.used_stabilized = true;
        have_cov = true;
      }
    }
  }
  if (!have_cov)
    throw std::runtime_error("laplace_approximate: curvature at the mode is not positive definite");

  out.log_normalizer = 0.5 * (static_cast<double>(T) * log_2pi + out.log_det_cov) + out.log_h_mode;
  return out;
}

double log_normalizer(const LaplaceResult& r, Eigen::Index t) {
  return 0.5 * (static_cast<double>(t) * log_2pi + r.log_det_cov) + r.log_h_mode;
}

}  // namespace ldmix
