#include <doctest.h>

#include <ldmix/laplace.hpp>
#include <ldmix/math.hpp>
#include <ldmix/rng.hpp>

#include <cmath>
#include <vector>

using namespace ldmix;

namespace {

/// Random but well-posed single-subject problem on a small grid.  Mixes
/// censored and missing cells so the derivative checks cover every branch.
struct ProblemFixture {
  Subject subject;
  MeasurementParams meas;
  StructuralParams strct;
  CensoringSpec censoring;

  ProblemFixture(Rng& rng, int J, int K, bool with_censoring) {
    subject.id = "s";
    subject.times = Eigen::VectorXd(J);
    double t = rng.uniform(-1.0, -0.5);
    for (int j = 0; j < J; ++j) {
      subject.times[j] = t;
      t += rng.uniform(0.2, 0.6);
    }
    subject.ages = subject.times;
    subject.x = Eigen::MatrixXd(J, 2);
    subject.z = Eigen::MatrixXd(J, 1);
    for (int j = 0; j < J; ++j) {
      subject.x(j, 0) = 1.0;
      subject.x(j, 1) = subject.times[j];
      subject.z(j, 0) = subject.times[j];
    }
    subject.y = Eigen::MatrixXd(J, K);
    subject.observed.setOnes(J, K);

    meas.beta = Eigen::MatrixXd(K, 2);
    meas.gamma1 = Eigen::VectorXd(K);
    meas.gamma2 = Eigen::VectorXd(K);
    meas.gamma3 = Eigen::VectorXd(K);
    meas.mu_type = Eigen::VectorXd::Zero(1);
    meas.sigma = Eigen::MatrixXd(2, K);
    censoring.rules.assign(K, CensorRule{});
    for (int k = 0; k < K; ++k) {
      meas.beta(k, 0) = rng.normal(0.0, 0.5);
      meas.beta(k, 1) = rng.normal(0.0, 0.3);
      meas.gamma1[k] = rng.uniform(1.0, 3.0);
      meas.gamma2[k] = rng.uniform(0.5, 2.0);
      meas.gamma3[k] = rng.normal(0.0, 1.0);
      meas.sigma(0, k) = rng.uniform(0.3, 1.0);
      meas.sigma(1, k) = rng.uniform(0.3, 1.0);
    }

    strct.alpha = Eigen::VectorXd::Constant(1, rng.normal(0.0, 0.4));
    strct.alpha0 = Eigen::VectorXd(2);
    strct.alpha0 << 0.0, rng.uniform(0.8, 2.0);
    strct.rho = Eigen::VectorXd(2);
    strct.rho << rng.uniform(0.6, 1.6), rng.uniform(0.6, 1.6);
    strct.lambda = Eigen::VectorXd::Constant(2, 0.5);

    for (int j = 0; j < J; ++j)
      for (int k = 0; k < K; ++k) subject.y(j, k) = rng.normal(0.0, 1.2);

    if (with_censoring && K > 0) {
      // Make marker 0 ceiling-censored and push a couple of cells onto it.
      const double bound = 1.0;
      censoring.rules[0] = CensorRule{CensorSide::ceiling, bound};
      for (int j = 0; j < J; ++j)
        if (subject.y(j, 0) > bound || rng.uniform() < 0.3) subject.y(j, 0) = bound;
    }
    // Knock out ~20% of cells.
    for (int j = 0; j < J; ++j)
      for (int k = 0; k < K; ++k)
        if (rng.uniform() < 0.2) subject.observed(j, k) = 0;
    // Keep at least one observation so the problem is not vacuous.
    subject.observed(0, 0) = 1;
  }

  LaplaceProblem problem(int cluster) const {
    return make_laplace_problem(subject, cluster, meas, strct, censoring);
  }
};

Eigen::VectorXd fd_grad(const LaplaceProblem& p, const Eigen::VectorXd& theta, double h) {
  Eigen::VectorXd g(p.dim());
  Eigen::VectorXd th = theta;
  for (Eigen::Index s = 0; s < p.dim(); ++s) {
    th[s] = theta[s] + h;
    const double up = log_h(p, th);
    th[s] = theta[s] - h;
    const double dn = log_h(p, th);
    th[s] = theta[s];
    g[s] = (up - dn) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_SUITE("laplace") {

TEST_CASE("no data: the Laplace approximation is exact") {
  Rng rng(555, 0);
  ProblemFixture fx(rng, 4, 2, false);
  fx.subject.observed.setZero();
  const LaplaceProblem p = fx.problem(1);

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(p.dim());
  CHECK(grad_log_h(p, zero).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((hess_log_h(p, zero) + p.gp_inv).lpNorm<Eigen::Infinity>() < 1e-12);

  const LaplaceResult r = laplace_approximate(p);
  CHECK(r.converged);
  CHECK(r.mode.lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK((r.cov - p.gp.cov).lpNorm<Eigen::Infinity>() < 1e-8);
  // The integral of N(theta; 0, D) is exactly 1, so log Z = 0.
  CHECK(std::abs(r.log_normalizer) < 1e-10);
}

TEST_CASE("gradient and Hessian match finite differences") {
  Rng rng(556, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const int J = 2 + static_cast<int>(rng.integer(4));
    const int K = 1 + static_cast<int>(rng.integer(3));
    ProblemFixture fx(rng, J, K, trial % 2 == 1);
    const LaplaceProblem p = fx.problem(static_cast<int>(rng.integer(2)));

    Eigen::VectorXd theta(p.dim());
    for (Eigen::Index s = 0; s < p.dim(); ++s) theta[s] = rng.normal(0.0, 0.7);

    const Eigen::VectorXd g = grad_log_h(p, theta);
    const Eigen::VectorXd gfd = fd_grad(p, theta, 1e-5);
    for (Eigen::Index s = 0; s < p.dim(); ++s)
      CHECK(rel_diff(g[s], gfd[s]) < 1e-6);

    const Eigen::MatrixXd h = hess_log_h(p, theta);
    CHECK((h - h.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);
    const double step = 1e-5;
    for (Eigen::Index s = 0; s < p.dim(); ++s) {
      Eigen::VectorXd th = theta;
      th[s] = theta[s] + step;
      const Eigen::VectorXd up = grad_log_h(p, th);
      th[s] = theta[s] - step;
      const Eigen::VectorXd dn = grad_log_h(p, th);
      const Eigen::VectorXd col = (up - dn) / (2.0 * step);
      for (Eigen::Index r = 0; r < p.dim(); ++r)
        CHECK(rel_diff(h(r, s), col[r]) < 1e-5);
    }
  }
}

TEST_CASE("single visit, single marker: mode agrees with golden-section search") {
  Rng rng(557, 2);
  ProblemFixture fx(rng, 1, 1, false);
  const LaplaceProblem p = fx.problem(0);
  const LaplaceResult r = laplace_approximate(p);
  REQUIRE(r.converged);

  // 1-D golden-section maximization of log h on a wide bracket.
  auto f = [&](double th) {
    Eigen::VectorXd v(1);
    v << th;
    return log_h(p, v);
  };
  double a = -20.0, b = 20.0;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  while (b - a > 1e-10) {
    if (f(c) > f(d)) b = d;
    else a = c;
    c = b - gr * (b - a);
    d = a + gr * (b - a);
  }
  CHECK(r.mode[0] == doctest::Approx(0.5 * (a + b)).epsilon(1e-7));
}

TEST_CASE("tiny gamma2 makes the target quadratic and Newton converges fast") {
  Rng rng(558, 3);
  ProblemFixture fx(rng, 4, 2, false);
  fx.meas.gamma2.setConstant(1e-8);  // sigmoid ~ constant: Gaussian posterior
  const LaplaceProblem p = fx.problem(0);
  const LaplaceResult r = laplace_approximate(p);
  CHECK(r.converged);
  CHECK(r.iterations <= 5);
  CHECK(r.grad_norm < 1e-8);
}

TEST_CASE("stabilized covariance identity on random SPD pairs") {
  // (U + V)^{-1} in the form used by the stabilized path:
  // (U^{-1} + V^{-1})^{-1} = U (U + V)^{-1} V, checked in Frobenius norm.
  Rng rng(559, 4);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 3 + static_cast<int>(rng.integer(4));
    Eigen::MatrixXd a(n, n), b(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        a(i, j) = rng.normal();
        b(i, j) = rng.normal();
      }
    const Eigen::MatrixXd u = a * a.transpose() + Eigen::MatrixXd::Identity(n, n) * 0.1;
    const Eigen::MatrixXd v = b * b.transpose() + Eigen::MatrixXd::Identity(n, n) * 0.1;
    const Eigen::MatrixXd lhs = (u.inverse() + v.inverse()).inverse();
    const Eigen::MatrixXd rhs = u * (u + v).inverse() * v;
    CHECK((lhs - rhs).norm() < 1e-8 * lhs.norm());
  }
}

TEST_CASE("result covariance equals the dense negative inverse Hessian") {
  Rng rng(560, 5);
  for (int trial = 0; trial < 5; ++trial) {
    ProblemFixture fx(rng, 4, 2, trial % 2 == 0);
    const LaplaceProblem p = fx.problem(trial % 2);
    const LaplaceResult r = laplace_approximate(p);
    REQUIRE(r.converged);
    const Eigen::MatrixXd neg_hess = -hess_log_h(p, r.mode);
    const Eigen::MatrixXd dense = neg_hess.inverse();
    CHECK((r.cov - dense).lpNorm<Eigen::Infinity>() < 1e-7 * dense.lpNorm<Eigen::Infinity>() + 1e-10);
    // log_det_cov must agree with the dense determinant.
    CHECK(r.log_det_cov == doctest::Approx(std::log(dense.determinant())).epsilon(1e-7));
  }
}

TEST_CASE("the mode is a stationary point and warm starts land on it") {
  Rng rng(561, 6);
  ProblemFixture fx(rng, 5, 2, true);
  const LaplaceProblem p = fx.problem(1);
  const LaplaceResult cold = laplace_approximate(p);
  REQUIRE(cold.converged);
  CHECK(grad_log_h(p, cold.mode).lpNorm<Eigen::Infinity>() < 1e-7);

  // Warm start from a perturbed mode: same answer.
  Eigen::VectorXd start = cold.mode;
  for (Eigen::Index s = 0; s < p.dim(); ++s) start[s] += rng.normal(0.0, 0.5);
  const LaplaceResult warm = laplace_approximate(p, &start);
  REQUIRE(warm.converged);
  CHECK((warm.mode - cold.mode).lpNorm<Eigen::Infinity>() < 1e-6);
  CHECK(warm.log_normalizer == doctest::Approx(cold.log_normalizer).epsilon(1e-8));
}

TEST_CASE("horizon rows carry no data terms") {
  Rng rng(562, 7);
  ProblemFixture fx(rng, 3, 2, false);
  Eigen::VectorXd future(2);
  future << fx.subject.times[2] + 0.4, fx.subject.times[2] + 0.8;
  Eigen::MatrixXd future_z(2, 1);
  future_z << future[0], future[1];
  const LaplaceProblem p = make_laplace_problem(fx.subject, 3, future, future_z, 0, fx.meas,
                                                fx.strct, fx.censoring);
  REQUIRE(p.dim() == 5);
  CHECK(p.t_data == 3);

  Eigen::VectorXd theta(5), a(5), curv(5);
  for (int s = 0; s < 5; ++s) theta[s] = rng.normal();
  data_terms(p, theta, &a, &curv);
  CHECK(a[3] == 0.0);
  CHECK(a[4] == 0.0);
  CHECK(curv[3] == 0.0);
  CHECK(curv[4] == 0.0);
}

TEST_CASE("log_normalizer assembles the three-part identity") {
  Rng rng(563, 8);
  ProblemFixture fx(rng, 4, 1, false);
  const LaplaceProblem p = fx.problem(0);
  const LaplaceResult r = laplace_approximate(p);
  REQUIRE(r.converged);
  const double t = static_cast<double>(p.dim());
  const double expect = 0.5 * t * log_2pi + 0.5 * r.log_det_cov + r.log_h_mode;
  CHECK(r.log_normalizer == doctest::Approx(expect).epsilon(1e-12));
  CHECK(log_normalizer(r, p.dim()) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(r.log_h_mode == doctest::Approx(log_h(p, r.mode)).epsilon(1e-12));
}

}  // TEST_SUITE
