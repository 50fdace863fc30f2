#include <doctest.h>

#include <ldmix/cohort.hpp>
#include <ldmix/math.hpp>
#include <ldmix/measurement.hpp>
#include <ldmix/rng.hpp>

#include "test_support.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

using namespace ldmix;

namespace {

MeasurementParams one_marker_params(double g1, double g2, double g3, double sigma) {
  MeasurementParams m;
  m.beta = Eigen::MatrixXd::Zero(1, 1);
  m.gamma1 = Eigen::VectorXd::Constant(1, g1);
  m.gamma2 = Eigen::VectorXd::Constant(1, g2);
  m.gamma3 = Eigen::VectorXd::Constant(1, g3);
  m.mu_type = Eigen::VectorXd::Zero(1);
  m.sigma = Eigen::MatrixXd::Constant(1, 1, sigma);
  return m;
}

}  // namespace

TEST_SUITE("measurement") {

TEST_CASE("sigmoid shift hits half-asymptote at the inflection and saturates") {
  CHECK(sigmoid_shift(1.0, 2.0, 3.0, 1.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(sigmoid_shift(1e4, 2.0, 3.0, 1.0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(sigmoid_shift(-1e4, 2.0, 3.0, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  // Frozen value: 2 / (1 + exp(-3)) at d = 2, gamma = (2, 3, 1).
  CHECK(sigmoid_shift(2.0, 2.0, 3.0, 1.0) ==
        doctest::Approx(1.9051482536448664).epsilon(1e-14));
  // No overflow far in either tail.
  CHECK(std::isfinite(sigmoid_shift(-1e8, 2.0, 3.0, 1.0)));
  CHECK(std::isfinite(sigmoid_shift(1e8, 2.0, 3.0, 1.0)));
}

TEST_CASE("biomarker_mean composes the linear and sigmoid parts") {
  MeasurementParams m = one_marker_params(1.0, 1.0, 0.0, 0.5);
  m.beta = Eigen::MatrixXd::Zero(1, 2);
  m.beta << 2.0, -1.0;
  Eigen::RowVectorXd x(2);
  x << 1.0, 0.5;

  SUBCASE("beta = 0 leaves the sigmoid alone") {
    MeasurementParams m0 = one_marker_params(2.0, 3.0, 1.0, 0.5);
    Eigen::RowVectorXd x0(1);
    x0 << 7.0;
    CHECK(biomarker_mean(x0, 2.0, 0, m0) ==
          doctest::Approx(1.9051482536448664).epsilon(1e-14));
  }
  SUBCASE("d -> -inf leaves only x'beta") {
    CHECK(biomarker_mean(x, -1e6, 0, m) == doctest::Approx(1.5).epsilon(1e-12));
  }
  SUBCASE("sigmoid term 0.3 placed by inverting the logistic") {
    // d = g3 + ln(0.3/0.7)/g2 makes h(d) = 0.3 when g1 = 1:
    // ln(3/7) = -0.8472978603872036.
    const double d = 1.0 + (-0.8472978603872036);
    MeasurementParams mu = one_marker_params(1.0, 1.0, 1.0, 0.5);
    mu.beta = Eigen::MatrixXd::Zero(1, 2);
    mu.beta << 2.0, 0.0;
    CHECK(biomarker_mean(x, d, 0, mu) == doctest::Approx(2.3).epsilon(1e-12));
  }
}

TEST_CASE("censored_normal_logpdf matches frozen normal constants") {
  CensorRule none;
  // Standard normal density at the mean: -log(sqrt(2 pi)).
  CHECK(censored_normal_logpdf(0.0, 0.0, 1.0, none) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-14));

  CensorRule ceil2{CensorSide::ceiling, 2.0};
  // Interior observation is untouched by the rule.
  CHECK(censored_normal_logpdf(0.0, 0.0, 1.0, ceil2) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-14));
  // At the bound the density becomes upper-tail mass. With mu at the bound:
  // log(1 - Phi(0)) = log(1/2).
  CHECK(censored_normal_logpdf(2.0, 2.0, 1.0, ceil2) ==
        doctest::Approx(-0.6931471805599453).epsilon(1e-14));
  // One sd below the bound: log(1 - Phi(1)) = -1.8410216450092635.
  CHECK(censored_normal_logpdf(2.0, 1.0, 1.0, ceil2) ==
        doctest::Approx(-1.8410216450092635).epsilon(1e-13));
  // Deep tail stays finite: z = 30 gives log Phi(-30) = -454.3212439563432.
  CHECK(censored_normal_logpdf(2.0, -28.0, 1.0, ceil2) ==
        doctest::Approx(-454.3212439563432).epsilon(1e-10));

  CensorRule floor0{CensorSide::floor, 0.0};
  // Floor mirrors the ceiling: log Phi((l - mu)/sigma).
  CHECK(censored_normal_logpdf(0.0, 0.0, 1.0, floor0) ==
        doctest::Approx(-0.6931471805599453).epsilon(1e-14));
  CHECK(censored_normal_logpdf(0.0, 1.0, 1.0, floor0) ==
        doctest::Approx(-1.8410216450092635).epsilon(1e-13));
}

TEST_CASE("censored_normal_logpdf edge handling") {
  // Values past the bound are treated as censored, same mass as at the bound.
  CensorRule ceil2{CensorSide::ceiling, 2.0};
  CHECK(censored_normal_logpdf(2.5, 0.0, 1.0, ceil2) ==
        doctest::Approx(censored_normal_logpdf(2.0, 0.0, 1.0, ceil2)).epsilon(1e-14));
  CensorRule floor0{CensorSide::floor, 0.0};
  CHECK(censored_normal_logpdf(-0.5, 1.0, 1.0, floor0) ==
        doctest::Approx(censored_normal_logpdf(0.0, 1.0, 1.0, floor0)).epsilon(1e-14));
  CensorRule none;
  CHECK_THROWS_AS(censored_normal_logpdf(0.0, 0.0, 0.0, none), std::invalid_argument);
  CHECK_THROWS_AS(censored_normal_logpdf(0.0, 0.0, -1.0, none), std::invalid_argument);
}

TEST_CASE("censored density sheds exactly the tail mass it claims") {
  // exp(logpdf at bound) + Phi((u - mu)/sigma) must equal 1 when integrating
  // the interior density: the point mass is 1 - Phi((u - mu)/sigma), so the
  // direct identity is exp(logmass) = 1 - Phi((u - mu)/sigma).
  Rng rng(20240818, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const double mu = rng.uniform(-3.0, 3.0);
    const double sigma = rng.uniform(0.2, 2.5);
    const double u = mu + rng.uniform(-2.0, 3.0) * sigma;
    CensorRule rule{CensorSide::ceiling, u};
    const double logmass = censored_normal_logpdf(u, mu, sigma, rule);
    const double phi = std_normal_cdf((u - mu) / sigma);
    CHECK(std::abs(std::exp(logmass) + phi - 1.0) < 1e-12);
  }
}

TEST_CASE("conditional_loglik sums the observed panel") {
  CensoringSpec cens;
  cens.rules = {CensorRule{}, CensorRule{}};

  MeasurementParams m;
  m.beta = Eigen::MatrixXd::Zero(2, 1);
  m.beta << 1.0, -0.5;
  m.gamma1 = Eigen::VectorXd::Constant(2, 2.0);
  m.gamma2 = Eigen::VectorXd::Constant(2, 1.0);
  m.gamma3 = Eigen::VectorXd::Zero(2);
  m.mu_type = Eigen::VectorXd::Zero(1);
  m.sigma = Eigen::MatrixXd::Constant(1, 2, 1.0);

  Subject s;
  s.id = "s";
  s.times = Eigen::VectorXd::LinSpaced(2, 0.0, 1.0);
  s.ages = s.times;
  s.x = Eigen::MatrixXd::Ones(2, 1);
  s.z = Eigen::MatrixXd::Zero(2, 0);
  s.y = Eigen::MatrixXd::Zero(2, 2);
  s.observed = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Ones(2, 2);

  Eigen::VectorXd d(2);
  d << -1e9, -1e9;  // sigmoid contributes nothing; means are (1, -0.5)

  SUBCASE("2x2 fully observed panel equals the by-hand sum") {
    // Means: marker 0 -> 1, marker 1 -> -0.5 at both visits, y = 0, sigma = 1.
    const double expected = 2.0 * normal_logpdf(0.0, 1.0, 1.0) +
                            2.0 * normal_logpdf(0.0, -0.5, 1.0);
    CHECK(conditional_loglik(s, d, 0, m, cens) == doctest::Approx(expected).epsilon(1e-13));
  }
  SUBCASE("missing cells drop out") {
    s.observed.setZero();
    s.observed(0, 0) = 1;
    CHECK(conditional_loglik(s, d, 0, m, cens) ==
          doctest::Approx(normal_logpdf(0.0, 1.0, 1.0)).epsilon(1e-13));
    s.observed.setZero();
    CHECK(conditional_loglik(s, d, 0, m, cens) == doctest::Approx(0.0));
  }
  SUBCASE("summation order: per-visit and per-marker sums agree") {
    Rng rng(7, 1);
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) s.y(j, k) = rng.normal();
    Eigen::VectorXd d2(2);
    d2 << 0.3, 0.8;
    double by_hand = 0.0;
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        by_hand += normal_logpdf(s.y(j, k), biomarker_mean(s.x.row(j), d2[j], k, m), 1.0);
    CHECK(conditional_loglik(s, d2, 0, m, cens) == doctest::Approx(by_hand).epsilon(1e-12));
  }
}

TEST_CASE("subject_conditional_loglik assembles d from the structural model") {
  CensoringSpec cens;
  cens.rules = {CensorRule{}};
  MeasurementParams m = one_marker_params(2.0, 1.5, 0.5, 0.8);
  m.sigma = Eigen::MatrixXd::Zero(2, 1);
  m.sigma << 0.8, 0.8;

  StructuralParams st;
  st.alpha = Eigen::VectorXd::Constant(1, 0.4);
  st.alpha0 = Eigen::VectorXd::Zero(2);
  st.alpha0 << 0.0, 2.0;
  st.rho = Eigen::VectorXd::Ones(2);
  st.lambda = Eigen::VectorXd::Constant(2, 0.5);

  Subject s;
  s.id = "s";
  s.times = Eigen::VectorXd::LinSpaced(3, 0.0, 2.0);
  s.ages = s.times;
  s.x = Eigen::MatrixXd::Ones(3, 1);
  s.z = Eigen::MatrixXd::Ones(3, 1);
  s.y = Eigen::MatrixXd::Constant(3, 1, 0.7);
  s.observed = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Ones(3, 1);

  Eigen::VectorXd theta(3);
  theta << 0.1, -0.2, 0.3;

  for (int ell = 0; ell < 2; ++ell) {
    Eigen::VectorXd d = linear_predictor(s, ell, st) + theta;
    CHECK(subject_conditional_loglik(s, theta, ell, m, st, cens) ==
          doctest::Approx(conditional_loglik(s, d, ell, m, cens)).epsilon(1e-13));
  }
}

TEST_CASE("interior log-density is unimodal in y and monotone tails") {
  CensorRule none;
  const double mu = 0.4, sigma = 0.7;
  double prev = censored_normal_logpdf(mu, mu, sigma, none);
  for (int i = 1; i <= 40; ++i) {
    const double cur = censored_normal_logpdf(mu + 0.1 * i, mu, sigma, none);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("ceiling tail mass is increasing in the mean") {
  // Raising mu pushes more mass past the bound, so the censored log-density at
  // the bound must increase monotonically with mu.
  CensorRule rule{CensorSide::ceiling, 1.0};
  double prev = censored_normal_logpdf(1.0, -5.0, 1.0, rule);
  for (int i = 1; i <= 50; ++i) {
    const double cur = censored_normal_logpdf(1.0, -5.0 + 0.2 * i, 1.0, rule);
    CHECK(cur > prev);
    prev = cur;
  }
}

}  // TEST_SUITE
