#include "pedmr/sampler.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "pedmr/diagnostics.hpp"
#include "pedmr/error.hpp"

namespace pedmr::sampler {
namespace {

Target standard_normal(std::size_t dim) {
  Target t;
  t.dim = dim;
  t.log_density_gradient = [](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    g = -q;
    return -0.5 * q.squaredNorm();
  };
  return t;
}

Target correlated_normal(double rho) {
  Eigen::Matrix2d cov;
  cov << 1.0, rho, rho, 1.0;
  const Eigen::Matrix2d prec = cov.inverse();
  Target t;
  t.dim = 2;
  t.log_density_gradient = [prec](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    g = -prec * q;
    return -0.5 * q.dot(prec * q);
  };
  return t;
}

std::vector<Eigen::VectorXd> inits(std::size_t chains, std::size_t dim, double value = 0.5) {
  return std::vector<Eigen::VectorXd>(chains, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim), value));
}

TEST(Leapfrog, ReversingMomentumReturnsToStart) {
  const auto t = standard_normal(3);
  const Eigen::VectorXd inv_metric = Eigen::Vector3d(1.0, 0.5, 2.0);
  PhasePoint z;
  z.q = Eigen::Vector3d(0.3, -1.2, 2.0);
  z.p = Eigen::Vector3d(0.7, 0.1, -0.4);
  z.grad.resize(3);
  z.log_density = t.log_density_gradient(z.q, z.grad);
  const PhasePoint start = z;
  for (int i = 0; i < 10; ++i) leapfrog(t.log_density_gradient, z, 0.1, inv_metric);
  z.p = -z.p;
  for (int i = 0; i < 10; ++i) leapfrog(t.log_density_gradient, z, 0.1, inv_metric);
  EXPECT_LT((z.q - start.q).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((z.p + start.p).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Leapfrog, EnergyErrorStaysBoundedOnGaussian) {
  const auto t = standard_normal(5);
  const Eigen::VectorXd inv_metric = Eigen::VectorXd::Ones(5);
  PhasePoint z;
  z.q = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
  z.p = Eigen::VectorXd::LinSpaced(5, 0.5, -0.5);
  z.grad.resize(5);
  z.log_density = t.log_density_gradient(z.q, z.grad);
  const double h0 = hamiltonian(z, inv_metric);
  double worst_early = 0.0, worst_late = 0.0;
  for (int i = 0; i < 10000; ++i) {
    leapfrog(t.log_density_gradient, z, 0.05, inv_metric);
    const double err = std::abs(hamiltonian(z, inv_metric) - h0);
    (i < 1000 ? worst_early : worst_late) = std::max(i < 1000 ? worst_early : worst_late, err);
  }
  EXPECT_LT(worst_early, 1e-2);
  EXPECT_LT(worst_late, 2.0 * worst_early + 1e-12);
}

TEST(Nuts, StandardNormal50RecoversMoments) {
  SamplerConfig cfg;
  cfg.n_draws = 2000;
  cfg.seed = 2024;
  const auto draws = hmc_run(standard_normal(50), inits(4, 50), cfg);
  int mean_fail = 0, var_fail = 0;
  for (std::size_t k = 0; k < 50; ++k) {
    const auto chains = draws.chains_of(draws.names[k]);
    const auto pooled = draws.pooled(draws.names[k]);
    const double mean = pooled.mean();
    const double var = (pooled.array() - mean).square().sum() / static_cast<double>(pooled.size() - 1);
    if (std::abs(mean) > 4.0 * diagnostics::mcse_mean(chains)) ++mean_fail;
    if (std::abs(var - 1.0) > 0.1) ++var_fail;
  }
  EXPECT_EQ(mean_fail, 0);
  EXPECT_EQ(var_fail, 0);
  EXPECT_EQ(draws.divergences(), 0u);
}

TEST(Nuts, CorrelatedGaussianRecoversCorrelation) {
  SamplerConfig cfg;
  cfg.seed = 8;
  const auto draws = hmc_run(correlated_normal(0.9), inits(4, 2), cfg);
  const auto a = draws.pooled("q[1]"), b = draws.pooled("q[2]");
  const Eigen::ArrayXd ac = a.array() - a.mean(), bc = b.array() - b.mean();
  const double corr = (ac * bc).sum() / std::sqrt(ac.square().sum() * bc.square().sum());
  EXPECT_NEAR(corr, 0.9, 0.05);
}

TEST(Nuts, IndependentCoordinatesAreUncorrelated) {
  SamplerConfig cfg;
  cfg.seed = 99;
  cfg.n_chains = 2;
  Target t;
  t.dim = 2;
  // Standard normal times a Gamma(3, 1) on the log scale.
  t.log_density_gradient = [](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    g.resize(2);
    g(0) = -q(0);
    g(1) = 3.0 - std::exp(q(1));
    return -0.5 * q(0) * q(0) + 3.0 * q(1) - std::exp(q(1));
  };
  const auto draws = hmc_run(t, inits(2, 2, 0.0), cfg);
  const auto a = draws.pooled("q[1]"), b = draws.pooled("q[2]");
  std::vector<Eigen::VectorXd> product;
  for (std::size_t c = 0; c < 2; ++c) {
    const Eigen::VectorXd x = draws.draws[c].col(0), y = draws.draws[c].col(1);
    product.emplace_back((x.array() - a.mean()) * (y.array() - b.mean()));
  }
  Eigen::VectorXd pooled(2 * product[0].size());
  pooled << product[0], product[1];
  EXPECT_LT(std::abs(pooled.mean()), 4.0 * diagnostics::mcse_mean(product));
}

TEST(Nuts, SeedDeterminism) {
  SamplerConfig cfg;
  cfg.n_warmup = 200;
  cfg.n_draws = 100;
  cfg.seed = 5;
  const auto a = hmc_run(standard_normal(4), inits(4, 4), cfg);
  const auto b = hmc_run(standard_normal(4), inits(4, 4), cfg);
  cfg.threads = 4;
  const auto c = hmc_run(standard_normal(4), inits(4, 4), cfg);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(a.draws[k], b.draws[k]);
    EXPECT_EQ(a.draws[k], c.draws[k]);
  }
  cfg.seed = 6;
  const auto d = hmc_run(standard_normal(4), inits(4, 4), cfg);
  EXPECT_NE(a.draws[0], d.draws[0]);
}

TEST(Nuts, RecordsPerDrawDiagnostics) {
  SamplerConfig cfg;
  cfg.n_warmup = 150;
  cfg.n_draws = 50;
  const auto draws = hmc_run(standard_normal(3), inits(4, 3), cfg);
  ASSERT_EQ(draws.info.size(), 4u);
  for (const auto& info : draws.info) {
    EXPECT_EQ(info.accept_stat.size(), 50u);
    EXPECT_EQ(info.tree_depth.size(), 50u);
    EXPECT_GT(info.step_size, 0.0);
    for (double lp : info.log_density) EXPECT_TRUE(std::isfinite(lp));
    for (std::size_t i = 0; i < 50; ++i) EXPECT_LE(info.n_leapfrog[i], (2 << info.tree_depth[i]) - 1);
  }
}

TEST(Nuts, MaxLeapfrogCapsTreeDepth) {
  SamplerConfig cfg;
  cfg.max_leapfrog = 4;
  cfg.n_warmup = 100;
  cfg.n_draws = 100;
  EXPECT_EQ(cfg.max_depth(), 2u);
  const auto draws = hmc_run(standard_normal(20), inits(4, 20), cfg);
  for (const auto& info : draws.info)
    for (int d : info.tree_depth) EXPECT_LE(d, 2);
}

TEST(Nuts, NonFiniteInitIsAnError) {
  SamplerConfig cfg;
  auto bad = inits(4, 2);
  bad[1](0) = std::nan("");
  EXPECT_THROW(hmc_run(standard_normal(2), bad, cfg), ValidationError);
  Target t = standard_normal(2);
  t.log_density_gradient = [](const Eigen::VectorXd&, Eigen::VectorXd& g) {
    g = Eigen::VectorXd::Zero(2);
    return -std::numeric_limits<double>::infinity();
  };
  EXPECT_THROW(hmc_run(t, inits(4, 2), cfg), ValidationError);
}

TEST(Nuts, AllDivergentWarmupIsAdaptationFailure) {
  Target t;
  t.dim = 1;
  // Finite only at the start point, so every move diverges.
  t.log_density_gradient = [](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    g = Eigen::VectorXd::Zero(1);
    return q(0) == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  };
  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.n_warmup = 50;
  cfg.n_draws = 10;
  EXPECT_THROW(hmc_run(t, inits(1, 1, 0.0), cfg), AdaptationError);
}

TEST(SamplerConfig, Validation) {
  SamplerConfig cfg;
  cfg.target_accept = 1.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.target_accept = 0.8;
  cfg.n_chains = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  EXPECT_THROW(hmc_run(standard_normal(2), inits(3, 2), SamplerConfig{}), ValidationError);
}

}  // namespace
}  // namespace pedmr::sampler
