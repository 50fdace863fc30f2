#include <doctest.h>

#include <ldmix/latent.hpp>
#include <ldmix/math.hpp>
#include <ldmix/rng.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>

using namespace ldmix;

namespace {

Subject subject_with_z(const Eigen::MatrixXd& z) {
  Subject s;
  s.id = "s";
  s.times = Eigen::VectorXd::LinSpaced(z.rows(), 0.0, z.rows() - 1.0);
  s.ages = s.times;
  s.z = z;
  s.x = Eigen::MatrixXd::Ones(z.rows(), 1);
  s.y = Eigen::MatrixXd::Zero(z.rows(), 1);
  s.observed = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Ones(z.rows(), 1);
  return s;
}

}  // namespace

TEST_SUITE("latent") {

TEST_CASE("linear_predictor is -alpha0 + z'alpha per visit") {
  StructuralParams st;
  st.alpha = Eigen::VectorXd(2);
  st.alpha << 0.4, -0.2;
  st.alpha0 = Eigen::VectorXd(2);
  st.alpha0 << 0.0, 1.5;
  st.rho = Eigen::VectorXd::Ones(2);
  st.lambda = Eigen::VectorXd::Constant(2, 0.5);

  Eigen::MatrixXd z(2, 2);
  z << 0.5, 1.0,  // 0.5*0.4 - 1.0*0.2 = 0
      1.0, 2.0;   // 1.0*0.4 - 2.0*0.2 = 0
  const Subject s = subject_with_z(z);

  SUBCASE("first cluster has no threshold shift") {
    const Eigen::VectorXd g = linear_predictor(s, 0, st);
    CHECK(g[0] == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(g[1] == doctest::Approx(0.0).epsilon(1e-14));
  }
  SUBCASE("later clusters subtract alpha0") {
    const Eigen::VectorXd g = linear_predictor(s, 1, st);
    CHECK(g[0] == doctest::Approx(-1.5).epsilon(1e-14));
    CHECK(g[1] == doctest::Approx(-1.5).epsilon(1e-14));
  }
  SUBCASE("cluster shift is uniform across visits") {
    const Eigen::VectorXd g0 = linear_predictor(s, 0, st);
    const Eigen::VectorXd g1 = linear_predictor(s, 1, st);
    CHECK(((g0 - g1).array() - 1.5).abs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("gp_covariance kernel values") {
  SUBCASE("unit diagonal (tau = 1)") {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(4, 0.0, 3.0);
    const GpFactor gp = gp_covariance(t, 1.3);
    for (int j = 0; j < 4; ++j)
      CHECK(gp.cov(j, j) == doctest::Approx(1.0 + gp.jitter).epsilon(1e-14));
  }
  SUBCASE("off-diagonal exp(-dt^2 / (2 rho^2))") {
    Eigen::VectorXd t(2);
    t << 0.0, 0.7;
    // |dt| = rho gives exp(-1/2) = 0.6065306597126334.
    const GpFactor a = gp_covariance(t, 0.7);
    CHECK(a.cov(0, 1) == doctest::Approx(0.6065306597126334).epsilon(1e-14));
    // times (0,1), rho = 0.5: exp(-1/(2*0.25)) = exp(-2) = 0.1353352832366127.
    Eigen::VectorXd t01(2);
    t01 << 0.0, 1.0;
    const GpFactor b = gp_covariance(t01, 0.5);
    CHECK(b.cov(0, 1) == doctest::Approx(0.1353352832366127).epsilon(1e-14));
    CHECK(b.cov(1, 0) == doctest::Approx(b.cov(0, 1)).epsilon(1e-16));
  }
  SUBCASE("kernel is stationary: shifting the grid changes nothing") {
    Eigen::VectorXd t(3), ts(3);
    t << 0.0, 0.9, 2.1;
    ts = t.array() + 17.25;
    const GpFactor a = gp_covariance(t, 1.1);
    const GpFactor b = gp_covariance(ts, 1.1);
    CHECK((a.cov - b.cov).lpNorm<Eigen::Infinity>() < 1e-14);
  }
}

TEST_CASE("gp_covariance factorization is PSD and log_det is consistent") {
  Rng rng(314, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const int J = 2 + static_cast<int>(rng.integer(7));
    Eigen::VectorXd t(J);
    double cur = rng.uniform(-1.0, 0.0);
    for (int j = 0; j < J; ++j) {
      t[j] = cur;
      cur += rng.uniform(0.05, 0.8);
    }
    const double rho = rng.uniform(0.3, 3.0);
    const GpFactor gp = gp_covariance(t, rho);
    // Factored matrix (with recorded jitter removed) is PSD up to roundoff.
    Eigen::MatrixXd raw = gp.cov - gp.jitter * Eigen::MatrixXd::Identity(J, J);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(raw);
    CHECK(es.eigenvalues().minCoeff() > -1e-8);
    // log_det matches the factorization it came from.
    const double ld = 2.0 * gp.llt.matrixLLT().diagonal().array().log().sum();
    CHECK(gp.log_det == doctest::Approx(ld).epsilon(1e-12));
  }
}

TEST_CASE("near-duplicate times get graded jitter instead of failure") {
  Eigen::VectorXd t(3);
  t << 0.0, 1e-9, 1.0;
  const GpFactor gp = gp_covariance(t, 1.0);
  CHECK(gp.jitter > 0.0);
  CHECK(gp.jitter <= 1e-6);
  CHECK(std::isfinite(gp.log_det));
  // Well-spaced grids should not need any jitter.
  Eigen::VectorXd good = Eigen::VectorXd::LinSpaced(5, 0.0, 4.0);
  CHECK(gp_covariance(good, 1.0).jitter == 0.0);
}

TEST_CASE("gp_logpdf matches frozen oracles") {
  SUBCASE("J = 1, theta = 0: standard normal at the origin") {
    Eigen::VectorXd t(1), theta(1);
    t << 0.0;
    theta << 0.0;
    const GpFactor gp = gp_covariance(t, 1.0);
    CHECK(gp_logpdf(theta, gp) == doctest::Approx(-0.9189385332046727).epsilon(1e-13));
  }
  SUBCASE("theta = 0 in general: -(J log 2 pi + log|K|)/2") {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(4, 0.0, 2.4);
    const GpFactor gp = gp_covariance(t, 0.9);
    const Eigen::VectorXd theta = Eigen::VectorXd::Zero(4);
    CHECK(gp_logpdf(theta, gp) ==
          doctest::Approx(-0.5 * (4.0 * log_2pi + gp.log_det)).epsilon(1e-13));
  }
  SUBCASE("J = 2 oracle") {
    // times (0, 1), rho = 1, theta = (1, -1): frozen via mpmath.
    Eigen::VectorXd t(2), theta(2);
    t << 0.0, 1.0;
    theta << 1.0, -1.0;
    const GpFactor gp = gp_covariance(t, 1.0);
    CHECK(gp_logpdf(theta, gp) == doctest::Approx(-4.150033576252603).epsilon(1e-10));
  }
}

TEST_CASE("gp_inverse actually inverts the factored matrix") {
  Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(6, 0.0, 3.5);
  const GpFactor gp = gp_covariance(t, 1.2);
  const Eigen::MatrixXd inv = gp_inverse(gp);
  const Eigen::MatrixXd eye = gp.cov * inv;
  CHECK((eye - Eigen::MatrixXd::Identity(6, 6)).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("gp_cov_drho matches finite differences") {
  Eigen::VectorXd t(4);
  t << 0.0, 0.4, 1.1, 2.0;
  for (const double rho : {0.5, 1.0, 2.3}) {
    const Eigen::MatrixXd d = gp_cov_drho(t, rho);
    const double h = 1e-6 * rho;
    const Eigen::MatrixXd hi = gp_covariance(t, rho + h).cov;
    const Eigen::MatrixXd lo = gp_covariance(t, rho - h).cov;
    const Eigen::MatrixXd fd = (hi - lo) / (2.0 * h);
    CHECK((d - fd).lpNorm<Eigen::Infinity>() < 1e-6);
    // Diagonal of the derivative is zero: variance does not depend on rho.
    CHECK(d.diagonal().lpNorm<Eigen::Infinity>() < 1e-14);
  }
}

TEST_CASE("gp_sample reproduces the kernel's second moments") {
  Eigen::VectorXd t(2);
  t << 0.0, 1.0;
  const double rho = 1.0;
  const GpFactor gp = gp_covariance(t, rho);
  Rng rng(99, 3);
  const int n = 10000;
  double s0 = 0, s1 = 0, s00 = 0, s11 = 0, s01 = 0;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd th = gp_sample(gp, rng);
    s0 += th[0];
    s1 += th[1];
    s00 += th[0] * th[0];
    s11 += th[1] * th[1];
    s01 += th[0] * th[1];
  }
  const double m0 = s0 / n, m1 = s1 / n;
  const double v0 = s00 / n - m0 * m0;
  const double v1 = s11 / n - m1 * m1;
  const double c01 = s01 / n - m0 * m1;
  // 3 standard errors: se(mean) ~ 1/sqrt(n), se(var) ~ sqrt(2/n).
  const double se_mean = 3.0 / std::sqrt(static_cast<double>(n));
  const double se_var = 3.0 * std::sqrt(2.0 / n);
  CHECK(std::abs(m0) < se_mean);
  CHECK(std::abs(m1) < se_mean);
  CHECK(std::abs(v0 - 1.0) < se_var);
  CHECK(std::abs(v1 - 1.0) < se_var);
  // Covariance target exp(-1/2); generous 3 se bound for a product moment.
  CHECK(std::abs(c01 - 0.6065306597126334) < se_var);
}

TEST_CASE("mvn_sample reproduces mean and covariance") {
  Eigen::VectorXd mean(2);
  mean << 1.0, -2.0;
  Eigen::MatrixXd cov(2, 2);
  cov << 2.0, 0.6, 0.6, 0.5;
  Rng rng(11, 7);
  const int n = 20000;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd acc2 = Eigen::MatrixXd::Zero(2, 2);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd v = mvn_sample(mean, cov, rng);
    acc += v;
    acc2 += v * v.transpose();
  }
  const Eigen::VectorXd m = acc / n;
  const Eigen::MatrixXd c = acc2 / n - m * m.transpose();
  CHECK((m - mean).lpNorm<Eigen::Infinity>() < 3.0 * std::sqrt(2.0 / n));
  CHECK((c - cov).lpNorm<Eigen::Infinity>() < 3.0 * std::sqrt(2.0) * 2.0 / std::sqrt(n));
}

}  // TEST_SUITE
