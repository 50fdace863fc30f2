#include "ldmix/math.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <stdexcept>

namespace ldmix {

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return neg_inf();
  double m = neg_inf();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;  // all -inf, or a +inf/nan dominates
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

double log_sum_exp(const Eigen::VectorXd& x) {
  return log_sum_exp(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

double std_normal_logcdf(double z) {
  if (z > -26.0) {
    // erfc(|z|/sqrt2) stays a normal double well past this point.
    return std::log(0.5 * std::erfc(-z * inv_sqrt2));
  }
  // Asymptotic series in 1/z^2; truncation error ~ O(z^-12) is far below
  // double precision here.
  const double z2 = z * z;
  const double s =
      1.0 - (1.0 / z2) * (1.0 - (3.0 / z2) * (1.0 - (5.0 / z2) * (1.0 - (7.0 / z2) * (1.0 - 9.0 / z2))));
  return -0.5 * z2 - 0.5 * log_2pi - std::log(-z) + std::log(s);
}

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("std_normal_quantile: p outside (0,1)");
  // Acklam's piecewise rational approximation.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,  -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01, -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley step against the exact CDF.
  const double e = std_normal_cdf(x) - p;
  const double u = e / std_normal_pdf(x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double gamma_logpdf(double x, double shape, double rate) {
  if (x <= 0.0) return neg_inf();
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double inv_gamma_logpdf(double x, double shape, double scale) {
  if (x <= 0.0) return neg_inf();
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

double inv_gamma_cdf(double x, double shape, double scale) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_q(shape, scale / x);
}

double inv_gamma_quantile(double p, double shape, double scale) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("inv_gamma_quantile: p outside (0,1)");
  return scale / boost::math::gamma_q_inv(shape, p);
}

double dirichlet1_logpdf(const Eigen::VectorXd& lambda) {
  for (Eigen::Index l = 0; l < lambda.size(); ++l)
    if (!(lambda[l] > 0.0)) return neg_inf();
  return std::lgamma(static_cast<double>(lambda.size()));
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("empirical_quantile: q outside [0,1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - std::floor(h);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

}  // namespace ldmix
