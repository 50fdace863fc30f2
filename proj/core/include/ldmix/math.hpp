#pragma once

// Numerical building blocks shared across the library: log-domain reductions,
// stable Gaussian tail quantities, and the handful of distribution
// log-densities the priors and likelihood need.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace ldmix {

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double log_2pi = 1.8378770664093454836;
inline constexpr double inv_sqrt_2pi = 0.3989422804014326779;
inline constexpr double inv_sqrt2 = 0.7071067811865475244;

inline double quiet_nan() { return std::numeric_limits<double>::quiet_NaN(); }
inline double neg_inf() { return -std::numeric_limits<double>::infinity(); }

/// log(sum_i exp(x_i)); returns -inf on an empty span and propagates +inf.
double log_sum_exp(std::span<const double> x);
double log_sum_exp(const Eigen::VectorXd& x);

/// log(exp(a) + exp(b)) without leaving the log domain.
inline double log_add_exp(double a, double b) {
  if (a == neg_inf()) return b;
  if (b == neg_inf()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

/// Standard normal density / log-density.
inline double std_normal_pdf(double z) { return inv_sqrt_2pi * std::exp(-0.5 * z * z); }
inline double std_normal_logpdf(double z) { return -0.5 * (z * z + log_2pi); }

/// Phi(z), the standard normal CDF.
inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z * inv_sqrt2); }

/// log Phi(z), stable arbitrarily far into the left tail.  Uses erfc until
/// it risks losing precision, then the standard asymptotic expansion
/// Phi(z) ~ phi(z)/|z| * (1 - 1/z^2 + 3/z^4 - ...).
double std_normal_logcdf(double z);

/// log(1 - Phi(z)), stable in the right tail.
inline double std_normal_logtail(double z) { return std_normal_logcdf(-z); }

/// Inverse of Phi via Acklam's rational approximation plus one Halley
/// refinement; accurate to ~1e-15 over (0, 1).
double std_normal_quantile(double p);

/// log N(x; mu, sigma^2) with sigma the standard deviation.
inline double normal_logpdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * (z * z + log_2pi) - std::log(sigma);
}

/// log Gamma(x; shape, rate) density.
double gamma_logpdf(double x, double shape, double rate);

/// log InvGamma(x; shape, scale) density: x^-(a+1) exp(-b/x) b^a / Gamma(a).
double inv_gamma_logpdf(double x, double shape, double scale);

/// CDF and quantile of InvGamma(shape, scale), via the regularized upper
/// incomplete gamma function.
double inv_gamma_cdf(double x, double shape, double scale);
double inv_gamma_quantile(double p, double shape, double scale);

/// log Dirichlet(lambda; alpha = (1,...,1)) = log Gamma(L) on the simplex.
double dirichlet1_logpdf(const Eigen::VectorXd& lambda);

/// Streaming mean/variance accumulator (Welford).
class RunningMoments {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  std::int64_t count() const { return n_; }
  double mean() const { return mean_; }
  /// Sample variance (n-1 denominator); 0 for fewer than two points.
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }

 private:
  std::int64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Relative difference max(|a-b|) / max(1, |a|, |b|), used by tests.
inline double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Empirical quantile with linear interpolation between order statistics
/// (the R type-7 convention).  Copies and sorts; throws on an empty input.
double empirical_quantile(std::vector<double> values, double q);

}  // namespace ldmix
