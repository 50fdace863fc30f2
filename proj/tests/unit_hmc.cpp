#include <doctest.h>

#include <ldmix/hmc.hpp>
#include <ldmix/math.hpp>
#include <ldmix/rng.hpp>

#include "test_support.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace ldmix;

namespace {

/// Standard bivariate Gaussian with correlation r.
HmcTarget gaussian2_target(double r) {
  HmcTarget t;
  t.dim = 2;
  const double det = 1.0 - r * r;
  t.value_and_grad = [r, det](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
    const double q = (u[0] * u[0] - 2.0 * r * u[0] * u[1] + u[1] * u[1]) / det;
    g[0] = -(u[0] - r * u[1]) / det;
    g[1] = -(u[1] - r * u[0]) / det;
    return -0.5 * q;
  };
  return t;
}

/// InvGamma(shape, scale) in u = log x coordinates (Jacobian included):
/// log p(u) = const - shape * u - scale * exp(-u).
HmcTarget log_inv_gamma_target(double shape, double scale) {
  HmcTarget t;
  t.dim = 1;
  t.value_and_grad = [shape, scale](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
    const double e = std::exp(-u[0]);
    g[0] = -shape + scale * e;
    return -shape * u[0] - scale * e;
  };
  return t;
}

ChainResult sample_target(const HmcTarget& target, int draws, std::uint64_t seed,
                          double path_length = 1.2) {
  SamplerConfig cfg;
  cfg.warmup = 600;
  cfg.draws = draws;
  cfg.seed = seed;
  cfg.path_length = path_length;
  Rng rng(seed, 0);
  return run_hmc(target, cfg, rng, Eigen::VectorXd::Zero(target.dim));
}

/// Fabricated ChainResult holding the given draw column.
ChainResult fake_chain(const std::vector<double>& col) {
  ChainResult c;
  c.draws = Eigen::MatrixXd(static_cast<Eigen::Index>(col.size()), 1);
  for (std::size_t i = 0; i < col.size(); ++i) c.draws(static_cast<Eigen::Index>(i), 0) = col[i];
  c.lp = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(col.size()));
  c.divergent.assign(col.size(), 0);
  return c;
}

}  // namespace

TEST_SUITE("hmc") {

TEST_CASE("leapfrog keeps a free particle's momentum and is exactly reversible") {
  HmcTarget flat;
  flat.dim = 2;
  flat.value_and_grad = [](const Eigen::VectorXd&, Eigen::VectorXd& g) {
    g.setZero();
    return 0.0;
  };
  Eigen::VectorXd u(2), p(2);
  u << 0.3, -0.7;
  p << 1.0, 0.5;
  const Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(2);

  SUBCASE("zero gradient means straight-line motion") {
    const LeapfrogResult r = leapfrog(flat, u, p, 0.1, 10, inv_mass);
    CHECK((r.p - p).lpNorm<Eigen::Infinity>() < 1e-14);
    CHECK((r.u - (u + 1.0 * p)).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK(r.energy_error == doctest::Approx(0.0).epsilon(1e-14));
  }

  SUBCASE("integrating back with negated momentum returns to the start") {
    const HmcTarget g2 = gaussian2_target(0.4);
    const LeapfrogResult fwd = leapfrog(g2, u, p, 0.05, 20, inv_mass);
    const LeapfrogResult back = leapfrog(g2, fwd.u, -fwd.p, 0.05, 20, inv_mass);
    CHECK((back.u - u).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((back.p + p).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("leapfrog energy error scales as step^2") {
  const HmcTarget g2 = gaussian2_target(0.3);
  Eigen::VectorXd u(2), p(2);
  u << 1.0, -0.5;
  p << 0.4, 0.9;
  const Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(2);
  // Fixed total time T = n * step; halving step should quarter the error.
  const double t_total = 1.0;
  std::vector<double> errs;
  for (const int n : {20, 40, 80, 160}) {
    const LeapfrogResult r = leapfrog(g2, u, p, t_total / n, n, inv_mass);
    errs.push_back(std::abs(r.energy_error));
  }
  for (std::size_t i = 1; i < errs.size(); ++i) {
    const double ratio = errs[i - 1] / errs[i];
    CHECK(ratio > 2.5);  // ~4 for a second-order integrator
    CHECK(ratio < 6.0);
  }
}

TEST_CASE("non-finite trajectories are flagged, not propagated") {
  HmcTarget cliff;
  cliff.dim = 1;
  cliff.value_and_grad = [](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
    if (u[0] > 1.0) {
      g[0] = 0.0;
      return -std::numeric_limits<double>::infinity();
    }
    g[0] = 0.0;
    return 0.0;
  };
  Eigen::VectorXd u(1), p(1);
  u << 0.0;
  p << 1.0;
  const LeapfrogResult r = leapfrog(cliff, u, p, 0.5, 10, Eigen::VectorXd::Ones(1));
  CHECK_FALSE(r.finite);
}

TEST_CASE("run_hmc is bitwise deterministic in (seed, config)") {
  const HmcTarget g2 = gaussian2_target(0.5);
  const ChainResult a = sample_target(g2, 200, 42);
  const ChainResult b = sample_target(g2, 200, 42);
  CHECK(a.draws == b.draws);
  CHECK(a.step_size == b.step_size);
  CHECK(a.lp == b.lp);
  const ChainResult c = sample_target(g2, 200, 43);
  CHECK(a.draws != c.draws);
}

TEST_CASE("correlated 2-D Gaussian: moments recovered at 4000 draws") {
  const double r = 0.6;
  const ChainResult chain = sample_target(gaussian2_target(r), 4000, 7, 2.0);
  REQUIRE(chain.draws.rows() == 4000);
  CHECK(chain.n_divergences == 0);
  CHECK(chain.accept_rate > 0.6);

  RunningMoments m0, m1;
  double cross = 0.0;
  for (int i = 0; i < 4000; ++i) {
    m0.add(chain.draws(i, 0));
    m1.add(chain.draws(i, 1));
    cross += chain.draws(i, 0) * chain.draws(i, 1);
  }
  CHECK(std::abs(m0.mean()) < 0.05);
  CHECK(std::abs(m1.mean()) < 0.05);
  CHECK(std::abs(m0.variance() - 1.0) < 0.1);
  CHECK(std::abs(m1.variance() - 1.0) < 0.1);
  CHECK(std::abs(cross / 4000.0 - m0.mean() * m1.mean() - r) < 0.1);
}

TEST_CASE("log-transformed inverse gamma: QQ correlation above 0.99") {
  // Sampling InvGamma(3, 2) in log coordinates; back-transformed draws must
  // line up with the analytic quantile function.
  const ChainResult chain = sample_target(log_inv_gamma_target(3.0, 2.0), 4000, 11, 2.0);
  std::vector<double> x(4000);
  for (int i = 0; i < 4000; ++i) x[static_cast<std::size_t>(i)] = std::exp(chain.draws(i, 0));
  std::sort(x.begin(), x.end());

  RunningMoments mx, mq;
  double cross = 0.0;
  std::vector<double> q(4000);
  for (int i = 0; i < 4000; ++i) {
    q[static_cast<std::size_t>(i)] = inv_gamma_quantile((i + 0.5) / 4000.0, 3.0, 2.0);
    mx.add(x[static_cast<std::size_t>(i)]);
    mq.add(q[static_cast<std::size_t>(i)]);
    cross += x[static_cast<std::size_t>(i)] * q[static_cast<std::size_t>(i)];
  }
  const double cov = cross / 4000.0 - mx.mean() * mq.mean();
  const double corr = cov / std::sqrt(mx.variance() * mq.variance() *
                                      (3999.0 / 4000.0) * (3999.0 / 4000.0));
  CHECK(corr > 0.99);
  // Median as a robust location check: InvGamma(3, 2) median = 2 / gamma_q_inv-ish;
  // use the quantile function directly.
  const double med = 0.5 * (x[1999] + x[2000]);
  CHECK(std::abs(med - inv_gamma_quantile(0.5, 3.0, 2.0)) < 0.05);
}

TEST_CASE("uniform-probability binning of Gaussian draws passes a chi-square test") {
  // 20 equal-probability bins of the marginal; with good mixing the counts
  // are multinomial(n, 1/20).  Chi-square survival via boost's gamma_q.
  const ChainResult chain = sample_target(gaussian2_target(0.0), 4000, 13, 2.0);
  const int bins = 20;
  std::vector<int> count(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i < 4000; ++i) {
    const double p = std_normal_cdf(chain.draws(i, 0));
    int b = static_cast<int>(p * bins);
    b = std::min(std::max(b, 0), bins - 1);
    ++count[static_cast<std::size_t>(b)];
  }
  const double expect = 4000.0 / bins;
  double chisq = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double d = count[static_cast<std::size_t>(b)] - expect;
    chisq += d * d / expect;
  }
  // ESS of HMC draws is below 4000, which widens the true sampling
  // distribution; only reject at an extreme threshold.
  const double pvalue = boost::math::gamma_q((bins - 1) / 2.0, chisq / 2.0);
  CHECK(pvalue > 1e-4);
}

TEST_CASE("split_rhat and effective_sample_size on fabricated chains") {
  Rng rng(21, 0);
  std::vector<double> a(2000), b(2000);
  for (int i = 0; i < 2000; ++i) {
    a[static_cast<std::size_t>(i)] = rng.normal();
    b[static_cast<std::size_t>(i)] = rng.normal();
  }
  std::vector<ChainResult> same{fake_chain(a), fake_chain(b)};
  const Eigen::VectorXd rhat = split_rhat(same);
  CHECK(rhat[0] == doctest::Approx(1.0).epsilon(0.02));
  const Eigen::VectorXd ess = effective_sample_size(same);
  CHECK(ess[0] > 2000.0);  // iid draws across 2 chains of 2000
  CHECK(ess[0] < 6000.0);

  // Shift one chain far away: R-hat must blow up.
  for (auto& v : b) v += 10.0;
  std::vector<ChainResult> apart{fake_chain(a), fake_chain(b)};
  CHECK(split_rhat(apart)[0] > 3.0);

  // Strongly autocorrelated chain: ESS collapses.
  std::vector<double> ar(2000);
  double prev = 0.0;
  for (int i = 0; i < 2000; ++i) {
    prev = 0.95 * prev + std::sqrt(1.0 - 0.95 * 0.95) * rng.normal();
    ar[static_cast<std::size_t>(i)] = prev;
  }
  std::vector<ChainResult> sticky{fake_chain(ar)};
  CHECK(effective_sample_size(sticky)[0] < 600.0);
}

TEST_CASE("select_chain applies the three criteria in order") {
  auto chain_with = [](double lp_mean, int n_div, double lambda_mean) {
    ChainResult c;
    c.draws = Eigen::MatrixXd::Constant(100, 2, lambda_mean);
    c.draws.col(1).setConstant(1.0 - lambda_mean);
    c.lp = Eigen::VectorXd::Constant(100, lp_mean);
    c.divergent.assign(100, 0);
    c.n_divergences = n_div;
    return c;
  };
  PosteriorDraws d;
  d.names = {"lambda.1", "alpha.z0"};
  d.n_clusters = 2;

  SUBCASE("divergence-free chain wins even with lower lp") {
    d.chains = {chain_with(-10.0, 3, 0.4), chain_with(-20.0, 0, 0.4)};
    std::string reason;
    CHECK(select_chain(d, &reason) == 1);
    CHECK(!reason.empty());
  }
  SUBCASE("boundary degeneracy (lambda below 0.01) is skipped next") {
    d.chains = {chain_with(-5.0, 0, 0.005), chain_with(-20.0, 0, 0.4)};
    CHECK(select_chain(d) == 1);
  }
  SUBCASE("otherwise the larger mean lp wins") {
    d.chains = {chain_with(-20.0, 0, 0.4), chain_with(-5.0, 0, 0.4)};
    CHECK(select_chain(d) == 1);
  }
  SUBCASE("all chains flawed: fall back to lp among the least-bad set") {
    d.chains = {chain_with(-20.0, 2, 0.4), chain_with(-5.0, 1, 0.4)};
    const int pick = select_chain(d);
    CHECK(pick == 1);
  }
}

TEST_CASE("params_from_row inverts the reporting transform") {
  const std::string dir = test_support::temp_dir("hmc");
  const std::string path = test_support::write_text(dir, "cohort.csv",
                                                    test_support::two_subject_csv());
  const CohortData cohort = ingest_csv(path, test_support::two_marker_schema());
  PriorConfig prior;
  prior.rho_interval_lo = 0.5;
  prior.rho_interval_hi = 3.0;
  const ModelConfig cfg = make_model_config(cohort, 2, {}, prior);

  const ParameterSet ps = test_support::make_params(2, 2, 1, 2, 2);
  const Eigen::VectorXd row = cfg.layout.constrained_values(ps);
  const ParameterSet back = params_from_row(row, cfg);
  CHECK((back.measurement.beta - ps.measurement.beta).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((back.measurement.sigma - ps.measurement.sigma).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((back.structural.alpha0 - ps.structural.alpha0).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((back.structural.lambda - ps.structural.lambda).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((back.structural.rho - ps.structural.rho).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((back.measurement.gamma1 - ps.measurement.gamma1).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("run_chains is reproducible and thread-count invariant") {
  const std::string dir = test_support::temp_dir("hmc");
  const std::string path = test_support::write_text(dir, "cohort.csv",
                                                    test_support::two_subject_csv());
  const CohortData cohort = ingest_csv(path, test_support::two_marker_schema());
  PriorConfig prior;
  prior.rho_interval_lo = 0.5;
  prior.rho_interval_hi = 3.0;
  const ModelConfig cfg = make_model_config(cohort, 2, {}, prior);

  SamplerConfig sampler;
  sampler.chains = 2;
  sampler.warmup = 150;
  sampler.draws = 60;
  sampler.seed = 5;

  const PosteriorDraws a = run_chains(cohort, cfg, sampler);
  REQUIRE(a.chains.size() == 2);
  CHECK(a.n_draws_per_chain() == 60);
  CHECK(static_cast<int>(a.names.size()) == cfg.layout.size());
  CHECK(a.rhat.size() == cfg.layout.size());

  const PosteriorDraws b = run_chains(cohort, cfg, sampler);
  CHECK(a.chains[0].draws == b.chains[0].draws);
  CHECK(a.chains[1].draws == b.chains[1].draws);

  SamplerConfig threaded = sampler;
  threaded.threads = 2;
  const PosteriorDraws c = run_chains(cohort, cfg, threaded);
  CHECK(a.chains[0].draws == c.chains[0].draws);
  CHECK(a.chains[1].draws == c.chains[1].draws);

  // Chains differ from each other (different substreams).
  CHECK(a.chains[0].draws != a.chains[1].draws);

  // Every stored row is a valid constrained parameter vector.
  const ParameterSet ps = params_from_row(a.chains[0].draws.row(0), cfg);
  CHECK((ps.measurement.sigma.array() > 0.0).all());
  CHECK(ps.structural.lambda.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

}  // TEST_SUITE
