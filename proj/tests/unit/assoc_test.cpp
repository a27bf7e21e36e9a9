#include "pedmr/assoc.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "pedmr/error.hpp"
#include "pedmr/regression.hpp"
#include "pedmr/simulate.hpp"
#include "study.hpp"

namespace pedmr::assoc {
namespace {

struct Gls {
  double beta = 0.0;
  double se = 0.0;
  double log_likelihood = 0.0;
};

// Dense GLS at a fixed variance ratio, profiling out the residual variance.
Gls dense_gls(const Eigen::VectorXd& y, const Eigen::VectorXd& x, const Eigen::MatrixXd& k, double lambda) {
  const auto n = y.size();
  const Eigen::MatrixXd v = lambda * k + Eigen::MatrixXd::Identity(n, n);
  const Eigen::LLT<Eigen::MatrixXd> llt(v);
  Eigen::MatrixXd design(n, 2);
  design.col(0).setOnes();
  design.col(1) = x;
  const Eigen::MatrixXd vx = llt.solve(design);
  const Eigen::Matrix2d a = design.transpose() * vx;
  const Eigen::Vector2d coef = a.inverse() * (vx.transpose() * y);
  const Eigen::VectorXd r = y - design * coef;
  const double s2 = r.dot(llt.solve(r)) / static_cast<double>(n);
  const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  Gls g;
  g.beta = coef(1);
  g.se = std::sqrt(s2 * a.inverse()(1, 1));
  g.log_likelihood = -0.5 * static_cast<double>(n) * (std::log(2.0 * std::numbers::pi * s2) + 1.0) - 0.5 * logdet;
  return g;
}

struct Family {
  Eigen::MatrixXd relationship;
  pedigree::Pedigree ped;
};

Family pedigree_of_about_200(std::uint64_t seed) {
  Family f;
  f.ped = simulate::simulate_pedigree(4, 4, 3, seed);
  f.relationship = 2.0 * pedigree::kinship_matrix(f.ped).phi;
  return f;
}

Eigen::VectorXd mvn(const Eigen::MatrixXd& cov, std::mt19937_64& rng) {
  const Eigen::LLT<Eigen::MatrixXd> llt(cov + 1e-12 * Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
  std::normal_distribution<double> nd;
  Eigen::VectorXd e(cov.rows());
  for (auto& v : e) v = nd(rng);
  return llt.matrixL() * e;
}

}  // namespace

TEST(Lmm, IdentityRelationshipIsOls) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Eigen::VectorXd x(80), y(80);
  for (Eigen::Index i = 0; i < 80; ++i) {
    x(i) = nd(rng);
    y(i) = 0.5 - 0.3 * x(i) + nd(rng);
  }
  const auto r = lmm_fit(y, x, Eigen::MatrixXd::Identity(80, 80));
  EXPECT_NEAR(r.beta, regression::ols_slope(x, y).estimate, 1e-10);
  const auto g = dense_gls(y, x, Eigen::MatrixXd::Identity(80, 80), r.lambda);
  EXPECT_NEAR(r.se, g.se, 1e-10);
}

TEST(Lmm, AgreesWithFixedLambdaGlsAtTruth) {
  const auto fam = pedigree_of_about_200(3);
  const auto n = fam.relationship.rows();
  ASSERT_GE(n, 150);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  Eigen::VectorXd x(n);
  for (auto& v : x) v = nd(rng);
  const Eigen::VectorXd g = mvn(fam.relationship, rng);
  Eigen::VectorXd y = 0.2 + 0.4 * x.array() + g.array();
  for (auto& v : y) v += nd(rng);
  const auto r = lmm_fit(y, x, fam.relationship);
  const auto oracle = dense_gls(y, x, fam.relationship, 1.0);
  EXPECT_NEAR(r.beta, oracle.beta, 2.0 * r.se);
}

TEST(Lmm, LikelihoodMatchesDenseAndDominatesGrid) {
  const auto fam = pedigree_of_about_200(5);
  const auto n = fam.relationship.rows();
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;
  Eigen::VectorXd x(n);
  for (auto& v : x) v = nd(rng);
  Eigen::VectorXd y = 0.3 * x + 0.8 * mvn(fam.relationship, rng);
  for (auto& v : y) v += nd(rng);
  const LmmEngine engine(fam.relationship);
  const auto r = engine.fit(y, x);
  const auto dense = dense_gls(y, x, fam.relationship, r.lambda);
  EXPECT_NEAR(r.log_likelihood, dense.log_likelihood, 1e-8 * std::abs(dense.log_likelihood));
  EXPECT_NEAR(r.beta, dense.beta, 1e-8);
  EXPECT_NEAR(r.se, dense.se, 1e-8);
  for (int k = 0; k < LmmEngine::kGridPoints; ++k) {
    const double t = LmmEngine::kLogLambdaMin +
                     (LmmEngine::kLogLambdaMax - LmmEngine::kLogLambdaMin) * k / (LmmEngine::kGridPoints - 1);
    EXPECT_GE(r.log_likelihood + 1e-8, engine.profile_log_likelihood(std::exp(t), y, x));
  }
  EXPECT_NEAR(r.sigma_g2, r.lambda * r.sigma_e2, 1e-12);
}

TEST(Lmm, TypeOneErrorUnderNull) {
  const auto fam = pedigree_of_about_200(7);
  const auto n = fam.relationship.rows();
  const LmmEngine engine(fam.relationship);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  int rejections = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    Eigen::VectorXd x(n);
    for (auto& v : x) v = nd(rng);
    Eigen::VectorXd y = mvn(fam.relationship, rng);
    for (auto& v : y) v += nd(rng);
    if (engine.fit(y, x).p_value < 0.05) ++rejections;
  }
  const double frac = static_cast<double>(rejections) / reps;
  EXPECT_GE(frac, 0.02);
  EXPECT_LE(frac, 0.09);
}

TEST(Lmm, Errors) {
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(4, 0.0, 1.0);
  EXPECT_THROW(lmm_fit(y, Eigen::VectorXd::Ones(4), Eigen::MatrixXd::Identity(4, 4)), ValidationError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(4, 4);
  bad(0, 0) = -1.0;
  EXPECT_THROW(lmm_fit(y, y, bad), NotPositiveDefiniteError);
  EXPECT_THROW(lmm_fit(y, y, Eigen::MatrixXd::Identity(3, 3)), ValidationError);
}

TEST(AssocScan, IdentityLmmMatchesOlsScan) {
  const auto study = pedmr::testing::small_study(3);
  const auto& d = study.sim.data;
  const auto n = static_cast<Eigen::Index>(d.n());
  const auto lmm = assoc_scan(d, Eigen::MatrixXd::Identity(n, n), true);
  const auto ols = assoc_scan(d, Eigen::MatrixXd(), false);
  ASSERT_EQ(lmm.size(), ols.size());
  EXPECT_LT((lmm.beta_x - ols.beta_x).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((lmm.beta_y - ols.beta_y).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(lmm.exposure_leg, "lmm");
  EXPECT_EQ(ols.exposure_leg, "ols");
}

TEST(AssocScan, SingleColumnEqualsLmmFit) {
  const auto study = pedmr::testing::small_study(4);
  auto d = dataset::select_columns(study.sim.data, {0});
  const Eigen::MatrixXd rel = 2.0 * study.kinship.phi;
  const auto s = assoc_scan(d, rel, true);
  std::vector<Eigen::Index> obs;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d.n()); ++i)
    if (d.x_observed[static_cast<std::size_t>(i)]) obs.push_back(i);
  const Eigen::VectorXd z = d.z.col(0)(obs);
  const auto r = lmm_fit(d.x(obs), z, rel(obs, obs));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s.beta_x(0), r.beta);
  EXPECT_DOUBLE_EQ(s.se_x(0), r.se);
}

TEST(AssocScan, StrongestInstrumentRanksFirst) {
  pedmr::testing::StudySpec spec;
  spec.families = 6;
  spec.j = 10;
  spec.n_true = 0;
  spec.n_pleio = 0;
  spec.missing_frac = 0.1;
  auto study = pedmr::testing::make_study(spec, 9);
  // Re-simulate traits with one dominant instrument.
  auto tp = study.truth;
  tp.alpha.setZero();
  tp.alpha(6) = 1.0;
  tp.alpha(2) = 0.2;
  const auto sim = simulate::simulate_traits(study.ped, study.sim.data.z, tp, 0.1, 10);
  const auto s = assoc_scan(sim.data, 2.0 * study.kinship.phi, true);
  Eigen::Index best = 0;
  s.p_x.minCoeff(&best);
  EXPECT_EQ(s.snp_ids[static_cast<std::size_t>(best)], "snp7");
}

}  // namespace pedmr::assoc
