#include "ldmix/posterior.hpp"

#include "ldmix/math.hpp"
#include "ldmix/parallel.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace ldmix {

std::pair<double, double> solve_rho_hyperparams(double delta_min, double delta_max) {
  if (!(delta_min > 0.0) || !(delta_min < delta_max))
    throw std::invalid_argument("solve_rho_hyperparams: need 0 < delta_min < delta_max");

  // For a trial shape a, match b to the 1% lower quantile at delta_min, then
  // measure how much mass still lies above delta_max.
  auto matched_b = [&](double a) { return delta_min * boost::math::gamma_q_inv(a, 0.01); };
  auto residual = [&](double a) { return boost::math::gamma_q(a, matched_b(a) / delta_max) - 0.99; };

  double lo = 0.05, hi = 500.0;
  double f_lo = residual(lo), f_hi = residual(hi);
  for (int grow = 0; grow < 4 && f_lo * f_hi > 0.0; ++grow) {
    lo *= 0.1;
    hi *= 10.0;
    f_lo = residual(lo);
    f_hi = residual(hi);
  }
  if (f_lo * f_hi > 0.0)
    throw std::invalid_argument(
        "solve_rho_hyperparams: no (a,b) brackets the 98% interval condition; widen [delta_min, delta_max]");

  std::uintmax_t iters = 200;
  auto r = boost::math::tools::toms748_solve(residual, lo, hi, f_lo, f_hi,
                                             boost::math::tools::eps_tolerance<double>(44), iters);
  const double a = 0.5 * (r.first + r.second);
  const double b = matched_b(a);

  if (std::abs(inv_gamma_cdf(delta_min, a, b) - 0.01) > 1e-6 ||
      std::abs(inv_gamma_cdf(delta_max, a, b) - 0.99) > 1e-6)
    throw std::invalid_argument("solve_rho_hyperparams: solved hyperparameters miss the CDF targets");
  return {a, b};
}

ModelConfig make_model_config(const CohortData& cohort, int n_clusters, Eigen::VectorXd gamma1,
                              PriorConfig prior) {
  if (n_clusters < 1) throw std::invalid_argument("model config: n_clusters must be >= 1");
  const int K = cohort.n_markers;
  if (gamma1.size() == 0) gamma1 = Eigen::VectorXd::Ones(K);
  if (gamma1.size() != K) throw std::invalid_argument("model config: gamma1 length must equal K");
  if ((gamma1.array() <= 0.0).any()) throw std::invalid_argument("model config: gamma1 must be positive");

  ModelConfig cfg;
  cfg.n_clusters = n_clusters;
  cfg.gamma1 = std::move(gamma1);
  cfg.marker_types = cohort.marker_types();
  for (MarkerType t : {MarkerType::cognitive, MarkerType::mri, MarkerType::csf}) {
    if (std::find(cfg.marker_types.begin(), cfg.marker_types.end(), t) != cfg.marker_types.end()) {
      cfg.type_slots.push_back(t);
      cfg.type_slot_names.emplace_back(marker_type_name(t));
    }
  }
  cfg.type_slot_of.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const auto it = std::find(cfg.type_slots.begin(), cfg.type_slots.end(),
                              cfg.marker_types[static_cast<std::size_t>(k)]);
    cfg.type_slot_of[static_cast<std::size_t>(k)] = static_cast<int>(it - cfg.type_slots.begin());
  }

  cfg.prior = prior;
  if (!(std::isfinite(cfg.prior.rho_a) && std::isfinite(cfg.prior.rho_b))) {
    double lo = cfg.prior.rho_interval_lo, hi = cfg.prior.rho_interval_hi;
    if (!(std::isfinite(lo) && std::isfinite(hi))) {
      auto [dmin, dmax] = compute_deltas(cohort);
      lo = dmin;
      hi = dmax;
    }
    // Near-equal endpoints (identical visit grids) leave no room for a 98%
    // interval, so the quantile solve below cannot succeed.
    if (!(lo > 0.0) || !(hi - lo > 1e-9 * hi))
      throw std::invalid_argument(
          "model config: visit-span interval for the rho prior is degenerate; "
          "set rho_interval or rho_prior_a/rho_prior_b explicitly");
    std::tie(cfg.prior.rho_a, cfg.prior.rho_b) = solve_rho_hyperparams(lo, hi);
  }
  if (!(cfg.prior.rho_a > 0.0) || !(cfg.prior.rho_b > 0.0))
    throw std::invalid_argument("model config: rho prior hyperparameters must be positive");

  cfg.layout = ParameterLayout(K, cohort.n_x, cohort.n_z, n_clusters,
                               static_cast<int>(cfg.type_slots.size()));
  return cfg;
}

double log_prior(const ParameterSet& params, const ModelConfig& config) {
  const auto& m = params.measurement;
  const auto& s = params.structural;
  const auto& pr = config.prior;
  const int K = m.n_markers();
  const int L = config.n_clusters;
  const double beta_sd = std::sqrt(pr.beta_var);
  const double mu_sd = std::sqrt(pr.mu_type_var);

  double lp = 0.0;
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < m.beta.cols(); ++j) lp += normal_logpdf(m.beta(k, j), 0.0, beta_sd);
  for (int k = 0; k < K; ++k) lp += gamma_logpdf(m.gamma2[k], pr.gamma2_shape, pr.gamma2_rate);
  for (int k = 0; k < K; ++k)
    lp += normal_logpdf(m.gamma3[k], m.mu_type[config.type_slot_of[static_cast<std::size_t>(k)]], pr.gamma3_sd);
  for (int t = 0; t < m.mu_type.size(); ++t) lp += normal_logpdf(m.mu_type[t], 0.0, mu_sd);
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < K; ++k) lp += inv_gamma_logpdf(m.sigma(l, k), pr.sigma_shape, pr.sigma_scale);
  for (int j = 0; j < s.alpha.size(); ++j) lp += normal_logpdf(s.alpha[j], 0.0, pr.alpha_sd);
  for (int l = 1; l < L; ++l) lp += gamma_logpdf(s.alpha0[l], pr.alpha0_shape, pr.alpha0_rate);
  for (int l = 0; l < L; ++l) lp += inv_gamma_logpdf(s.rho[l], pr.rho_a, pr.rho_b);
  if (L > 1) lp += dirichlet1_logpdf(s.lambda);
  return lp;
}

void accumulate_prior_grad(const ParameterSet& params, const ModelConfig& config, ConstrainedGrad& g) {
  const auto& m = params.measurement;
  const auto& s = params.structural;
  const auto& pr = config.prior;
  const int K = m.n_markers();
  const int L = config.n_clusters;

  g.beta -= m.beta / pr.beta_var;
  for (int k = 0; k < K; ++k) {
    g.gamma2[k] += (pr.gamma2_shape - 1.0) / m.gamma2[k] - pr.gamma2_rate;
    const int slot = config.type_slot_of[static_cast<std::size_t>(k)];
    const double resid = (m.gamma3[k] - m.mu_type[slot]) / (pr.gamma3_sd * pr.gamma3_sd);
    g.gamma3[k] -= resid;
    g.mu_type[slot] += resid;
  }
  g.mu_type -= m.mu_type / pr.mu_type_var;
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < K; ++k)
      g.sigma(l, k) += -(pr.sigma_shape + 1.0) / m.sigma(l, k) +
                       pr.sigma_scale / (m.sigma(l, k) * m.sigma(l, k));
  g.alpha -= s.alpha / (pr.alpha_sd * pr.alpha_sd);
  for (int l = 1; l < L; ++l) g.alpha0[l] += (pr.alpha0_shape - 1.0) / s.alpha0[l] - pr.alpha0_rate;
  for (int l = 0; l < L; ++l)
    g.rho[l] += -(pr.rho_a + 1.0) / s.rho[l] + pr.rho_b / (s.rho[l] * s.rho[l]);
  // Dirichlet(1,...,1) is flat on the simplex: no lambda contribution.
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& u, double step) {
  Eigen::VectorXd g(u.size());
  Eigen::VectorXd x = u;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double ui = u[i];
    x[i] = ui + step;
    const double fp = f(x);
    x[i] = ui - step;
    const double fm = f(x);
    x[i] = ui;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Shared per-(subject, cluster) likelihood terms with full parameter chains.
// ---------------------------------------------------------------------------

namespace {

struct ClusterTerms {
  double loglik = 0.0;
  Eigen::VectorXd a;           // d loglik / d theta_j
  Eigen::MatrixXd dbeta;       // K x p
  Eigen::VectorXd dgamma2;     // K
  Eigen::VectorXd dgamma3;     // K
  Eigen::VectorXd dsigma_row;  // K, for sigma(ell, .)
  Eigen::VectorXd dalpha;      // q
  double dalpha0 = 0.0;
};

/// Conditional log-likelihood of one subject under cluster ell at latent path
/// theta, with (optionally) gradients w.r.t. every parameter entering the
/// observation terms.  d_j = g_j + theta_j must be supplied via g.
void cluster_terms(const Subject& subj, const Eigen::VectorXd& g, const Eigen::VectorXd& theta,
                   int ell, const MeasurementParams& m, const CensoringSpec& censoring,
                   bool want_grad, ClusterTerms& out) {
  const int J = subj.n_visits();
  const int K = m.n_markers();
  out.loglik = 0.0;
  if (want_grad) {
    out.a.setZero(J);
    out.dbeta.setZero(K, m.beta.cols());
    out.dgamma2.setZero(K);
    out.dgamma3.setZero(K);
    out.dsigma_row.setZero(K);
    out.dalpha.setZero(subj.z.cols());
    out.dalpha0 = 0.0;
  }

  for (int j = 0; j < J; ++j) {
    const double d = g[j] + theta[j];
    for (int k = 0; k < K; ++k) {
      if (!subj.observed(j, k)) continue;
      const double g1 = m.gamma1[k], g2 = m.gamma2[k], g3 = m.gamma3[k];
      const double sg = m.sigma(ell, k);
      const double S = logistic(g2 * (d - g3));
      const double B = S * (1.0 - S);
      const double mu = subj.x.row(j).dot(m.beta.row(k)) + g1 * S;
      const double y = subj.y(j, k);

      double ll, dll_dmu = 0.0, dll_dsg = 0.0;
      const CensorRule& rule = censoring.rule(k);
      if (rule.censors(y)) {
        const double z = (rule.bound - mu) / sg;
        if (rule.side == CensorSide::ceiling) {
          ll = std_normal_logtail(z);
          if (want_grad) {
            const double r = std::exp(std_normal_logpdf(z) - ll);
            dll_dmu = r / sg;
            dll_dsg = r * z / sg;
          }
        } else {
          ll = std_normal_logcdf(z);
          if (want_grad) {
            const double r = std::exp(std_normal_logpdf(z) - ll);
            dll_dmu = -r / sg;
            dll_dsg = -r * z / sg;
          }
        }
      } else {
        const double A = y - mu;
        ll = -0.5 * (A * A / (sg * sg) + log_2pi) - std::log(sg);
        if (want_grad) {
          dll_dmu = A / (sg * sg);
          dll_dsg = -1.0 / sg + A * A / (sg * sg * sg);
        }
      }
      out.loglik += ll;
      if (want_grad) {
        const double hp = g1 * g2 * B;  // d mu / d d
        out.a[j] += dll_dmu * hp;
        out.dbeta.row(k) += dll_dmu * subj.x.row(j);
        out.dgamma2[k] += dll_dmu * g1 * B * (d - g3);
        out.dgamma3[k] -= dll_dmu * hp;
        out.dsigma_row[k] += dll_dsg;
        out.dalpha += dll_dmu * hp * subj.z.row(j).transpose();
        out.dalpha0 -= dll_dmu * hp;
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// JointPosterior
// ---------------------------------------------------------------------------

JointPosterior::JointPosterior(const CohortData& cohort, const ModelConfig& config, int threads)
    : cohort_(&cohort), config_(config), threads_(std::max(1, threads)) {
  const int n = cohort.n_subjects();
  const int L = config_.n_clusters;
  theta_off_.resize(static_cast<std::size_t>(n));
  int off = config_.layout.size();
  std::unordered_map<std::string, int> grid_ix;
  grid_of_.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& s = cohort.subjects[static_cast<std::size_t>(i)];
    theta_off_[static_cast<std::size_t>(i)] = off;
    off += L * s.n_visits();
    std::string key(reinterpret_cast<const char*>(s.times.data()),
                    static_cast<std::size_t>(s.times.size()) * sizeof(double));
    auto [it, inserted] = grid_ix.emplace(std::move(key), static_cast<int>(grids_.size()));
    if (inserted) grids_.push_back({s.times, {}});
    grids_[static_cast<std::size_t>(it->second)].subjects.push_back(i);
    grid_of_[static_cast<std::size_t>(i)] = it->second;
  }
  dim_ = off;
}

double JointPosterior::value(const Eigen::VectorXd& u) const { return evaluate(u, nullptr); }

double JointPosterior::value_and_grad(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
  grad.setZero(dim_);
  return evaluate(u, &grad);
}

double JointPosterior::evaluate(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
  if (u.size() != dim_) throw std::invalid_argument("JointPosterior: wrong coordinate count");
  const ParameterLayout& layout = config_.layout;
  const int n_par = layout.size();
  const int L = config_.n_clusters;
  const int n = cohort_->n_subjects();
  const Eigen::VectorXd u_par = u.head(n_par);

  ParameterSet params;
  try {
    params = layout.constrain(u_par, config_.gamma1);
  } catch (const std::exception&) {
    return neg_inf();
  }
  const auto& m = params.measurement;
  const auto& s = params.structural;
  if (!m.gamma2.allFinite() || !m.sigma.allFinite() || !s.rho.allFinite() || !s.alpha0.allFinite() ||
      !s.lambda.allFinite() || (m.gamma2.array() <= 0.0).any() || (m.sigma.array() <= 0.0).any() ||
      (s.rho.array() <= 0.0).any())
    return neg_inf();

  double base = log_prior(params, config_) + layout.log_jacobian(u_par);
  if (!std::isfinite(base)) return neg_inf();

  // One GP bundle per (cluster, distinct grid): Cholesky factor of the
  // kernel and its rho-derivative, shared by every subject on the grid.
  // With symmetric A = C^-1 dD C^-T and Phi(.) = lower triangle with the
  // diagonal halved, dC = C Phi(A) satisfies dC C^T + C dC^T = dD.
  std::vector<std::vector<GpBundle>> bundles(static_cast<std::size_t>(L));
  try {
    for (int l = 0; l < L; ++l) {
      auto& row = bundles[static_cast<std::size_t>(l)];
      row.resize(grids_.size());
      for (std::size_t gix = 0; gix < grids_.size(); ++gix) {
        GpBundle& b = row[gix];
        b.gp = gp_covariance(grids_[gix].times, s.rho[l]);
        b.chol = b.gp.llt.matrixL();
        if (grad) {
          const Eigen::MatrixXd dcov = gp_cov_drho(grids_[gix].times, s.rho[l]);
          const auto lower = b.gp.llt.matrixL();
          Eigen::MatrixXd a = lower.solve(dcov);
          a = lower.solve(Eigen::MatrixXd(a.transpose()));
          Eigen::MatrixXd phi = a.triangularView<Eigen::StrictlyLower>();
          phi.diagonal() = 0.5 * a.diagonal();
          b.dchol = b.chol * phi;
        }
      }
    }
  } catch (const std::exception&) {
    return neg_inf();
  }

  const Eigen::VectorXd log_lambda = s.lambda.array().log();
  // Per-subject scratch: value plus (if grad) a constrained-gradient slot laid
  // out as [layout offsets | lambda (L)], with alpha0 grads in the eta slots
  // and natural-scale grads in the gamma2/sigma/rho slots.
  std::vector<double> vals(static_cast<std::size_t>(n), 0.0);
  const int slot_len = n_par + L;
  Eigen::MatrixXd slots;
  if (grad) slots.setZero(slot_len, n);

  std::vector<char> failed(static_cast<std::size_t>(n), 0);
  parallel_for(n, threads_, [&](int i) {
    const Subject& subj = cohort_->subjects[static_cast<std::size_t>(i)];
    const int J = subj.n_visits();
    const int gix = grid_of_[static_cast<std::size_t>(i)];
    const Eigen::VectorXd zal = subj.z * s.alpha;

    Eigen::VectorXd mix(L);
    std::vector<ClusterTerms> terms(static_cast<std::size_t>(L));
    std::vector<Eigen::VectorXd> whites(static_cast<std::size_t>(L));
    double val = 0.0;
    for (int l = 0; l < L; ++l) {
      const GpBundle& b = bundles[static_cast<std::size_t>(l)][static_cast<std::size_t>(gix)];
      const Eigen::VectorXd w = u.segment(theta_off_[static_cast<std::size_t>(i)] + l * J, J);
      whites[static_cast<std::size_t>(l)] = w;
      const Eigen::VectorXd theta = b.chol * w;
      const Eigen::VectorXd g = zal.array() - s.alpha0[l];
      cluster_terms(subj, g, theta, l, m, cohort_->censoring, grad != nullptr,
                    terms[static_cast<std::size_t>(l)]);
      mix[l] = log_lambda[l] + terms[static_cast<std::size_t>(l)].loglik;
      // Whitened prior over this cluster's coordinates enters at full weight.
      val += -0.5 * (static_cast<double>(J) * log_2pi + w.squaredNorm());
    }
    const double lse = log_sum_exp(mix);
    val += lse;
    vals[static_cast<std::size_t>(i)] = val;
    if (!std::isfinite(val)) {
      failed[static_cast<std::size_t>(i)] = 1;
      return;
    }
    if (!grad) return;

    auto slot = slots.col(i);
    for (int l = 0; l < L; ++l) {
      const ClusterTerms& t = terms[static_cast<std::size_t>(l)];
      const GpBundle& b = bundles[static_cast<std::size_t>(l)][static_cast<std::size_t>(gix)];
      const Eigen::VectorXd& wl = whites[static_cast<std::size_t>(l)];
      const double w = std::exp(mix[l] - lse);

      // Whitened coordinates: data gradient pulled back through chol(D),
      // minus the standard-normal prior pull.
      grad->segment(theta_off_[static_cast<std::size_t>(i)] + l * J, J) =
          w * (b.chol.transpose() * t.a) - wl;

      for (int k = 0; k < layout.n_markers(); ++k) {
        for (int j = 0; j < layout.n_xcov(); ++j)
          slot[layout.beta_offset() + k * layout.n_xcov() + j] += w * t.dbeta(k, j);
        slot[layout.gamma2_offset() + k] += w * t.dgamma2[k];
        slot[layout.gamma3_offset() + k] += w * t.dgamma3[k];
        slot[layout.sigma_offset() + l * layout.n_markers() + k] += w * t.dsigma_row[k];
      }
      for (int j = 0; j < layout.n_zcov(); ++j) slot[layout.alpha_offset() + j] += w * t.dalpha[j];
      if (l >= 1) slot[layout.eta_offset() + (l - 1)] += w * t.dalpha0;
      // rho enters only through theta = chol(D(rho)) w.
      slot[layout.rho_offset() + l] += w * t.a.dot(b.dchol * wl);
      slot[n_par + l] += w / s.lambda[l];
    }
  });

  for (int i = 0; i < n; ++i)
    if (failed[static_cast<std::size_t>(i)]) return neg_inf();

  double value = base;
  for (int i = 0; i < n; ++i) value += vals[static_cast<std::size_t>(i)];
  if (!std::isfinite(value)) return neg_inf();
  if (!grad) return value;

  // Ordered reduction of the constrained-space slots, then prior gradients,
  // then the chain through the transforms.
  Eigen::VectorXd total = Eigen::VectorXd::Zero(slot_len);
  for (int i = 0; i < n; ++i) total += slots.col(i);

  ConstrainedGrad cg = layout.zero_grad();
  for (int k = 0; k < layout.n_markers(); ++k) {
    for (int j = 0; j < layout.n_xcov(); ++j) cg.beta(k, j) = total[layout.beta_offset() + k * layout.n_xcov() + j];
    cg.gamma2[k] = total[layout.gamma2_offset() + k];
    cg.gamma3[k] = total[layout.gamma3_offset() + k];
  }
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < layout.n_markers(); ++k)
      cg.sigma(l, k) = total[layout.sigma_offset() + l * layout.n_markers() + k];
  for (int j = 0; j < layout.n_zcov(); ++j) cg.alpha[j] = total[layout.alpha_offset() + j];
  for (int l = 1; l < L; ++l) cg.alpha0[l] = total[layout.eta_offset() + (l - 1)];
  for (int l = 0; l < L; ++l) cg.rho[l] = total[layout.rho_offset() + l];
  cg.lambda = total.tail(L);

  accumulate_prior_grad(params, config_, cg);
  grad->head(n_par) = layout.chain_gradient(u_par, params, cg);
  return value;
}

// ---------------------------------------------------------------------------
// MarginalPosterior
// ---------------------------------------------------------------------------

MarginalPosterior::MarginalPosterior(const CohortData& cohort, const ModelConfig& config, int threads)
    : cohort_(&cohort), config_(config), threads_(std::max(1, threads)) {}

Eigen::MatrixXd MarginalPosterior::subject_cluster_lognorm(const ParameterSet& params) const {
  const int n = cohort_->n_subjects();
  const int L = config_.n_clusters;
  Eigen::MatrixXd out(n, L);
  std::vector<std::string> errors(static_cast<std::size_t>(n));
  parallel_for(n, threads_, [&](int i) {
    const Subject& subj = cohort_->subjects[static_cast<std::size_t>(i)];
    for (int l = 0; l < L; ++l) {
      try {
        const LaplaceProblem prob = make_laplace_problem(subj, l, params.measurement,
                                                         params.structural, cohort_->censoring);
        const LaplaceResult res = laplace_approximate(prob);
        if (!std::isfinite(res.log_normalizer)) throw std::runtime_error("non-finite log normalizer");
        out(i, l) = res.log_normalizer;
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(i)] =
            "marginal likelihood failed for subject '" + subj.id + "', cluster " +
            std::to_string(l + 1) + ": " + e.what();
        return;
      }
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error(e);
  return out;
}

double MarginalPosterior::mixture_loglik(const ParameterSet& params) const {
  const Eigen::MatrixXd lognorm = subject_cluster_lognorm(params);
  const Eigen::VectorXd log_lambda = params.structural.lambda.array().log();
  double total = 0.0;
  for (int i = 0; i < lognorm.rows(); ++i)
    total += log_sum_exp(Eigen::VectorXd(lognorm.row(i).transpose() + log_lambda));
  return total;
}

double MarginalPosterior::value_params(const ParameterSet& params) const {
  return mixture_loglik(params) + log_prior(params, config_);
}

double MarginalPosterior::value(const Eigen::VectorXd& u) const {
  const ParameterSet params = config_.layout.constrain(u, config_.gamma1);
  return value_params(params) + config_.layout.log_jacobian(u);
}

Eigen::VectorXd MarginalPosterior::grad_fd(const Eigen::VectorXd& u) const {
  return fd_gradient([this](const Eigen::VectorXd& x) { return value(x); }, u);
}

}  // namespace ldmix
