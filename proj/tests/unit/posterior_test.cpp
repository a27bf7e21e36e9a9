#include "pedmr/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/distributions/binomial.hpp>
#include <gtest/gtest.h>
#include <json.hpp>

#include "pedmr/error.hpp"
#include "pedmr/fit.hpp"
#include "study.hpp"

namespace pedmr::posterior {
namespace {

sampler::PosteriorDraws synthetic(const std::vector<std::string>& names, std::size_t chains, std::size_t n,
                                  std::uint64_t seed) {
  sampler::PosteriorDraws d;
  d.names = names;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (std::size_t c = 0; c < chains; ++c) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(names.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    d.draws.push_back(m);
    d.info.emplace_back();
  }
  return d;
}

// Sorting-based quantile with the same interpolation rule.
double sorted_quantile(Eigen::VectorXd v, double p) {
  std::sort(v.data(), v.data() + v.size());
  const double h = static_cast<double>(v.size() - 1) * p;
  const auto lo = static_cast<Eigen::Index>(std::floor(h));
  const auto hi = std::min<Eigen::Index>(lo + 1, v.size() - 1);
  return v(lo) + (h - static_cast<double>(lo)) * (v(hi) - v(lo));
}

}  // namespace

TEST(Percentiles, OneToHundred) {
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(100, 1.0, 100.0);
  const auto q = percentiles(v, {0.0, 0.05, 0.5, 1.0});
  EXPECT_DOUBLE_EQ(q(0), 1.0);
  EXPECT_NEAR(q(1), 5.95, 1e-12);
  EXPECT_DOUBLE_EQ(q(2), 50.5);
  EXPECT_DOUBLE_EQ(q(3), 100.0);
}

TEST(Percentiles, MatchSortedOracleOnShuffledInput) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Eigen::VectorXd v(257);
  for (auto& x : v) x = nd(rng);
  const auto q = percentiles(v);
  for (std::size_t k = 0; k < kTableProbs.size(); ++k)
    EXPECT_NEAR(q(static_cast<Eigen::Index>(k)), sorted_quantile(v, kTableProbs[k]), 1e-14);
}

TEST(Percentiles, RejectsBadInput) {
  EXPECT_THROW(percentiles(Eigen::VectorXd(0)), ValidationError);
  EXPECT_THROW(percentiles(Eigen::VectorXd::Ones(3), {0.5, 0.2}), ValidationError);
  EXPECT_THROW(percentiles(Eigen::VectorXd::Ones(3), {1.5}), ValidationError);
}

TEST(Percentiles, MonotoneInProbability) {
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> ex;
  Eigen::VectorXd v(99);
  for (auto& x : v) x = ex(rng);
  std::vector<double> probs;
  for (int k = 0; k <= 20; ++k) probs.push_back(k / 20.0);
  const auto q = percentiles(v, probs);
  for (Eigen::Index k = 1; k < q.size(); ++k) EXPECT_LE(q(k - 1), q(k));
}

TEST(OddsRatio, ExpEquivarianceAtOrderStatistics) {
  // With 101 draws every table probability lands on an order statistic.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(-0.5, 0.3);
  Eigen::VectorXd v(101);
  for (auto& x : v) x = nd(rng);
  const auto direct = percentiles(odds_ratio_transform(v));
  const auto mapped = odds_ratio_transform(percentiles(v));
  EXPECT_LT((direct - mapped).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(OddsRatio, ElementwiseExp) {
  const Eigen::VectorXd x = (Eigen::VectorXd(3) << -1.0, 0.0, 2.0).finished();
  const auto y = odds_ratio_transform(x);
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(y(k), std::exp(x(k)));
}

TEST(PercentileTable, CausalEffectRowsAndCsvRoundTrip) {
  auto d = synthetic({"theta", "omega_y"}, 2, 101, 6);
  const auto t = causal_effect_table(d);
  ASSERT_EQ(t.rows.size(), 2u);
  const auto& lo = t.row("causal_log_odds_ratio").values;
  const auto& orr = t.row("causal_odds_ratio").values;
  EXPECT_LT((orr - lo.array().exp().matrix()).cwiseAbs().maxCoeff(), 1e-12);
  const auto csv = t.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "quantity,p5,p25,p50,p75,p95");
  const auto back = PercentileTable::parse_csv(csv);
  ASSERT_EQ(back.rows.size(), t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    EXPECT_EQ(back.rows[r].quantity, t.rows[r].quantity);
    EXPECT_LT((back.rows[r].values - t.rows[r].values).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_THROW(t.row("missing"), std::exception);
}

TEST(FamilyEffects, DirectAndIndirect) {
  auto d = synthetic({"theta", "gamma_x[1]", "gamma_x[2]", "gamma_y[1]", "gamma_y[2]"}, 1, 101, 7);
  const auto fe = family_effects(d);
  ASSERT_EQ(fe.direct.rows.size(), 2u);
  EXPECT_EQ(fe.direct.rows[0].quantity, "family 1");
  const Eigen::VectorXd gy = d.pooled("gamma_y[2]");
  const Eigen::VectorXd prod = (d.pooled("gamma_x[2]").array() * d.pooled("theta").array()).matrix();
  EXPECT_LT((fe.direct.rows[1].values - odds_ratio_transform(percentiles(gy))).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((fe.indirect.rows[1].values - odds_ratio_transform(percentiles(prod))).cwiseAbs().maxCoeff(), 1e-12);
  auto plain = synthetic({"theta"}, 1, 10, 8);
  EXPECT_THROW(family_effects(plain), ValidationError);
}

TEST(IntervalCsv, ColumnOrder) {
  auto d = synthetic({"theta"}, 1, 101, 9);
  const auto csv = interval_csv(d, {"theta"});
  const auto q = percentiles(d.pooled("theta"));
  std::istringstream is(csv);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "param,low50,low90,median,high90,high50");
  std::vector<double> vals;
  std::stringstream rs(row.substr(row.find(',') + 1));
  for (std::string tok; std::getline(rs, tok, ',');) vals.push_back(std::stod(tok));
  ASSERT_EQ(vals.size(), 5u);
  EXPECT_DOUBLE_EQ(vals[0], q(1));
  EXPECT_DOUBLE_EQ(vals[1], q(0));
  EXPECT_DOUBLE_EQ(vals[2], q(2));
  EXPECT_DOUBLE_EQ(vals[3], q(4));
  EXPECT_DOUBLE_EQ(vals[4], q(3));
}

TEST(ImputeSummary, MeansAndCorrelation) {
  sampler::PosteriorDraws d;
  d.names = {"x_mis[1]", "x_mis[2]", "x_mis[3]"};
  Eigen::MatrixXd m(4, 3);
  m << 1, 2, 3,  //
      3, 2, 5,   //
      1, 4, 3,   //
      3, 4, 5;
  d.draws.push_back(m);
  d.info.emplace_back();
  const Eigen::VectorXd truth = (Eigen::VectorXd(3) << 2.0, 3.0, 4.0).finished();
  const auto s = impute_summary(d, truth);
  EXPECT_LT((s.mean - truth).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(s.sd(0), std::sqrt(4.0 / 3.0), 1e-12);
  ASSERT_TRUE(s.correlation.has_value());
  EXPECT_NEAR(*s.correlation, 1.0, 1e-12);
  EXPECT_NEAR(*s.rmse, 0.0, 1e-12);
  EXPECT_NE(s.to_csv({"a", "b", "c"}).find("a,"), std::string::npos);
  EXPECT_THROW(s.to_csv({"a"}), ValidationError);
}

TEST(DrawsCsv, RoundTrip) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd;
  std::vector<Eigen::MatrixXd> chains(2, Eigen::MatrixXd(5, 3));
  for (auto& c : chains)
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = nd(rng);
  const std::vector<std::string> names{"theta", "alpha[1]", "alpha[2]"};
  const auto csv = draws_csv(names, chains);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "chain,iter,theta,alpha[1],alpha[2]");
  const auto t = parse_draws_csv(csv);
  EXPECT_EQ(t.names, names);
  ASSERT_EQ(t.chains.size(), 2u);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(t.chains[c], chains[c]);
}

class PpcTest : public ::testing::Test {
 protected:
  // Independence model at a point where every linear predictor is zero, on
  // data with exactly half cases.
  void SetUp() override {
    auto study = pedmr::testing::small_study(21);
    auto& data = study.sim.data;
    for (Eigen::Index i = 0; i < data.y.size(); ++i) data.y(i) = static_cast<int>(i % 2);
    cfg.level = bayes::Level::independence;
    cfg.noncentered = false;
    const auto prep = fit::prepare(data, nullptr, cfg);
    model = std::make_shared<bayes::PosteriorModel>(prep.data, prep.relationship_cholesky, cfg);
    const auto& layout = model->layout();
    Eigen::VectorXd v = bayes::init_params(layout, 1);
    for (const char* name : {"theta", "omega_y", "z", "u"}) {
      const auto& b = layout.block(name);
      v.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size)).setZero();
    }
    draws.names = layout.coordinate_names();
    draws.draws.push_back(v.transpose().replicate(400, 1));
    draws.info.emplace_back();
  }

  bayes::ModelConfig cfg;
  std::shared_ptr<bayes::PosteriorModel> model;
  sampler::PosteriorDraws draws;
};

TEST_F(PpcTest, SymmetricNullNearHalf) {
  ASSERT_LT(model->outcome_linear_predictor(model->natural(draws.draws[0].row(0).transpose())).cwiseAbs().maxCoeff(),
            1e-12);
  const auto r = ppc(draws, *model, 3);
  EXPECT_EQ(r.replicates, 200u);
  const double n = static_cast<double>(model->data().n());
  EXPECT_DOUBLE_EQ(r.observed_cases, n / 2.0);
  // P(Binomial(n, 1/2) >= n/2), with a binomial Monte Carlo band of 4 sd.
  const boost::math::binomial_distribution<double> bin(n, 0.5);
  const double expected = 1.0 - boost::math::cdf(bin, n / 2.0 - 1.0);
  EXPECT_NEAR(r.p_total, expected, 4.0 * std::sqrt(expected * (1.0 - expected) / 200.0));
  EXPECT_EQ(static_cast<std::size_t>(r.p_family.size()), model->data().m());
  EXPECT_NEAR(r.observed_family_cases.sum(), r.observed_cases, 1e-12);
}

TEST_F(PpcTest, DeterministicPerSeed) {
  const auto a = ppc(draws, *model, 9);
  const auto b = ppc(draws, *model, 9);
  EXPECT_EQ(a.p_total, b.p_total);
  EXPECT_EQ(a.p_family, b.p_family);
  const auto j = nlohmann::json::parse(a.to_json());
  EXPECT_EQ(j["statistics"][0]["p_value"].get<double>(), a.p_total);
  EXPECT_EQ(j["statistics"].size(), 1 + a.families.size());
}

TEST_F(PpcTest, RejectsMismatchedDraws) {
  auto bad = draws;
  bad.names.pop_back();
  bad.draws[0] = bad.draws[0].leftCols(bad.draws[0].cols() - 1).eval();
  EXPECT_THROW(ppc(bad, *model, 1), ValidationError);
}

}  // namespace pedmr::posterior
