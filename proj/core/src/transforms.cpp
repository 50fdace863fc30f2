#include "ldmix/transforms.hpp"

#include "ldmix/math.hpp"

#include <cmath>
#include <stdexcept>

namespace ldmix {

ParameterLayout::ParameterLayout(int K, int p, int q, int L, int n_types)
    : K_(K), p_(p), q_(q), L_(L), n_types_(n_types) {
  if (K < 1 || p < 1 || q < 1 || L < 1 || n_types < 1)
    throw std::invalid_argument("ParameterLayout: all dimensions must be positive");
  off_beta_ = 0;
  off_gamma2_ = off_beta_ + K * p;
  off_gamma3_ = off_gamma2_ + K;
  off_mu_ = off_gamma3_ + K;
  off_sigma_ = off_mu_ + n_types;
  off_alpha_ = off_sigma_ + L * K;
  off_eta_ = off_alpha_ + q;
  off_rho_ = off_eta_ + (L - 1);
  off_lambda_ = off_rho_ + L;
  n_ = off_lambda_ + (L - 1);
}

ParameterSet ParameterLayout::constrain(const Eigen::VectorXd& u, const Eigen::VectorXd& gamma1) const {
  if (u.size() != n_) throw std::invalid_argument("constrain: wrong vector length");
  if (gamma1.size() != K_) throw std::invalid_argument("constrain: gamma1 length mismatch");

  ParameterSet ps;
  auto& m = ps.measurement;
  auto& s = ps.structural;

  m.beta.resize(K_, p_);
  for (int k = 0; k < K_; ++k)
    for (int j = 0; j < p_; ++j) m.beta(k, j) = u[off_beta_ + k * p_ + j];
  m.gamma1 = gamma1;
  m.gamma2 = u.segment(off_gamma2_, K_).array().exp();
  m.gamma3 = u.segment(off_gamma3_, K_);
  m.mu_type = u.segment(off_mu_, n_types_);
  m.sigma.resize(L_, K_);
  for (int l = 0; l < L_; ++l)
    for (int k = 0; k < K_; ++k) m.sigma(l, k) = std::exp(u[off_sigma_ + l * K_ + k]);

  s.alpha = u.segment(off_alpha_, q_);
  s.alpha0.setZero(L_);
  double acc = 0.0;
  for (int l = 1; l < L_; ++l) {
    acc += std::exp(u[off_eta_ + (l - 1)]);
    s.alpha0[l] = acc;
  }
  s.rho = u.segment(off_rho_, L_).array().exp();

  s.lambda.resize(L_);
  if (L_ == 1) {
    s.lambda[0] = 1.0;
  } else {
    // ALR with cluster L as reference, computed through log-sum-exp.
    Eigen::VectorXd logits(L_);
    logits.head(L_ - 1) = u.segment(off_lambda_, L_ - 1);
    logits[L_ - 1] = 0.0;
    const double lse = log_sum_exp(logits);
    s.lambda = (logits.array() - lse).exp();
  }
  return ps;
}

Eigen::VectorXd ParameterLayout::unconstrain(const ParameterSet& params) const {
  const auto& m = params.measurement;
  const auto& s = params.structural;
  if (m.beta.rows() != K_ || m.beta.cols() != p_ || m.gamma2.size() != K_ || m.gamma3.size() != K_ ||
      m.mu_type.size() != n_types_ || m.sigma.rows() != L_ || m.sigma.cols() != K_ ||
      s.alpha.size() != q_ || s.alpha0.size() != L_ || s.rho.size() != L_ || s.lambda.size() != L_)
    throw std::invalid_argument("unconstrain: parameter shapes do not match layout");
  if ((m.gamma2.array() <= 0.0).any() || (m.sigma.array() <= 0.0).any() || (s.rho.array() <= 0.0).any())
    throw std::invalid_argument("unconstrain: gamma2, sigma, rho must be positive");
  if (s.alpha0[0] != 0.0) throw std::invalid_argument("unconstrain: alpha0[1] must be exactly 0");
  for (int l = 1; l < L_; ++l)
    if (!(s.alpha0[l] > s.alpha0[l - 1]))
      throw std::invalid_argument("unconstrain: alpha0 must be strictly increasing");
  if ((s.lambda.array() <= 0.0).any() || std::abs(s.lambda.sum() - 1.0) > 1e-10)
    throw std::invalid_argument("unconstrain: lambda must be positive and sum to 1");

  Eigen::VectorXd u(n_);
  for (int k = 0; k < K_; ++k)
    for (int j = 0; j < p_; ++j) u[off_beta_ + k * p_ + j] = m.beta(k, j);
  u.segment(off_gamma2_, K_) = m.gamma2.array().log();
  u.segment(off_gamma3_, K_) = m.gamma3;
  u.segment(off_mu_, n_types_) = m.mu_type;
  for (int l = 0; l < L_; ++l)
    for (int k = 0; k < K_; ++k) u[off_sigma_ + l * K_ + k] = std::log(m.sigma(l, k));
  u.segment(off_alpha_, q_) = s.alpha;
  for (int l = 1; l < L_; ++l) u[off_eta_ + (l - 1)] = std::log(s.alpha0[l] - s.alpha0[l - 1]);
  u.segment(off_rho_, L_) = s.rho.array().log();
  for (int l = 0; l + 1 < L_; ++l)
    u[off_lambda_ + l] = std::log(s.lambda[l]) - std::log(s.lambda[L_ - 1]);
  return u;
}

double ParameterLayout::log_jacobian(const Eigen::VectorXd& u) const {
  if (u.size() != n_) throw std::invalid_argument("log_jacobian: wrong vector length");
  double j = 0.0;
  j += u.segment(off_gamma2_, K_).sum();      // d(exp)/du per coordinate
  j += u.segment(off_sigma_, L_ * K_).sum();
  j += u.segment(off_rho_, L_).sum();
  j += u.segment(off_eta_, L_ - 1).sum();     // triangular map, diag exp(eta)
  if (L_ > 1) {
    Eigen::VectorXd logits(L_);
    logits.head(L_ - 1) = u.segment(off_lambda_, L_ - 1);
    logits[L_ - 1] = 0.0;
    const double lse = log_sum_exp(logits);
    j += (logits.array() - lse).sum();        // sum_l log lambda_l
  }
  return j;
}

ConstrainedGrad ParameterLayout::zero_grad() const {
  ConstrainedGrad g;
  g.beta.setZero(K_, p_);
  g.gamma2.setZero(K_);
  g.gamma3.setZero(K_);
  g.mu_type.setZero(n_types_);
  g.sigma.setZero(L_, K_);
  g.alpha.setZero(q_);
  g.alpha0.setZero(L_);
  g.rho.setZero(L_);
  g.lambda.setZero(L_);
  return g;
}

Eigen::VectorXd ParameterLayout::chain_gradient(const Eigen::VectorXd& u, const ParameterSet& params,
                                                const ConstrainedGrad& g) const {
  if (u.size() != n_) throw std::invalid_argument("chain_gradient: wrong vector length");
  const auto& m = params.measurement;
  const auto& s = params.structural;
  Eigen::VectorXd out(n_);

  for (int k = 0; k < K_; ++k)
    for (int j = 0; j < p_; ++j) out[off_beta_ + k * p_ + j] = g.beta(k, j);
  for (int k = 0; k < K_; ++k) out[off_gamma2_ + k] = g.gamma2[k] * m.gamma2[k] + 1.0;
  out.segment(off_gamma3_, K_) = g.gamma3;
  out.segment(off_mu_, n_types_) = g.mu_type;
  for (int l = 0; l < L_; ++l)
    for (int k = 0; k < K_; ++k) out[off_sigma_ + l * K_ + k] = g.sigma(l, k) * m.sigma(l, k) + 1.0;
  out.segment(off_alpha_, q_) = g.alpha;
  // alpha0[l] = sum_{m<=l-1} exp(eta_m): each eta_m feeds every later threshold.
  for (int mth = 0; mth + 1 < L_; ++mth) {
    double acc = 0.0;
    for (int l = mth + 1; l < L_; ++l) acc += g.alpha0[l];
    out[off_eta_ + mth] = acc * std::exp(u[off_eta_ + mth]) + 1.0;
  }
  for (int l = 0; l < L_; ++l) out[off_rho_ + l] = g.rho[l] * s.rho[l] + 1.0;
  if (L_ > 1) {
    // d lambda_l / d v_m = lambda_l (1{l=m} - lambda_m);
    // d (sum_l log lambda_l) / d v_m = 1 - L lambda_m.
    const double dot = g.lambda.dot(s.lambda);
    for (int mth = 0; mth + 1 < L_; ++mth)
      out[off_lambda_ + mth] =
          s.lambda[mth] * (g.lambda[mth] - dot) + (1.0 - static_cast<double>(L_) * s.lambda[mth]);
  }
  return out;
}

std::vector<std::string> ParameterLayout::parameter_names(const std::vector<std::string>& type_names) const {
  if (static_cast<int>(type_names.size()) != n_types_)
    throw std::invalid_argument("parameter_names: type label count mismatch");
  std::vector<std::string> names(static_cast<std::size_t>(n_));
  auto at = [&](int i) -> std::string& { return names[static_cast<std::size_t>(i)]; };
  for (int k = 0; k < K_; ++k)
    for (int j = 0; j < p_; ++j) at(off_beta_ + k * p_ + j) = "beta.k" + std::to_string(k) + ".x" + std::to_string(j);
  for (int k = 0; k < K_; ++k) at(off_gamma2_ + k) = "gamma2.k" + std::to_string(k);
  for (int k = 0; k < K_; ++k) at(off_gamma3_ + k) = "gamma3.k" + std::to_string(k);
  for (int t = 0; t < n_types_; ++t) at(off_mu_ + t) = "mu_type." + type_names[static_cast<std::size_t>(t)];
  for (int l = 0; l < L_; ++l)
    for (int k = 0; k < K_; ++k) at(off_sigma_ + l * K_ + k) = "sigma.l" + std::to_string(l) + ".k" + std::to_string(k);
  for (int j = 0; j < q_; ++j) at(off_alpha_ + j) = "alpha.z" + std::to_string(j);
  for (int l = 1; l < L_; ++l) at(off_eta_ + (l - 1)) = "alpha0.l" + std::to_string(l);
  for (int l = 0; l < L_; ++l) at(off_rho_ + l) = "rho.l" + std::to_string(l);
  for (int l = 0; l + 1 < L_; ++l) at(off_lambda_ + l) = "lambda.l" + std::to_string(l);
  return names;
}

Eigen::VectorXd ParameterLayout::constrained_values(const ParameterSet& params) const {
  const auto& m = params.measurement;
  const auto& s = params.structural;
  Eigen::VectorXd v(n_);
  for (int k = 0; k < K_; ++k)
    for (int j = 0; j < p_; ++j) v[off_beta_ + k * p_ + j] = m.beta(k, j);
  v.segment(off_gamma2_, K_) = m.gamma2;
  v.segment(off_gamma3_, K_) = m.gamma3;
  v.segment(off_mu_, n_types_) = m.mu_type;
  for (int l = 0; l < L_; ++l)
    for (int k = 0; k < K_; ++k) v[off_sigma_ + l * K_ + k] = m.sigma(l, k);
  v.segment(off_alpha_, q_) = s.alpha;
  for (int l = 1; l < L_; ++l) v[off_eta_ + (l - 1)] = s.alpha0[l];
  v.segment(off_rho_, L_) = s.rho;
  for (int l = 0; l + 1 < L_; ++l) v[off_lambda_ + l] = s.lambda[l];
  return v;
}

}  // namespace ldmix
