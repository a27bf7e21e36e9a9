#include "pedmr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "pedmr/error.hpp"
#include "pedmr/regression.hpp"
#include "study.hpp"

namespace pedmr::dataset {
namespace {

const char* kTrio = "family id father mother sex affected\nT F1 0 0 1 0\nT M1 0 0 2 0\nT C1 F1 M1 1 1\n";

pedigree::Pedigree trio() { return pedigree::parse_pedigree(kTrio); }

double sample_sd(const Eigen::VectorXd& v) {
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

MRDataset random_dataset(std::uint64_t seed) {
  auto study = pedmr::testing::small_study(seed);
  return study.sim.data;
}

}  // namespace

TEST(LoadDataset, TrioParents) {
  const auto ped = trio();
  const auto d = load_dataset(ped, "id,rs1,rs2\nC1,1,2\nF1,0,1\nM1,2,0\n", "id,X,Y\nF1,1.5,0\nM1,NA,1\nC1,0.5,1\n");
  ASSERT_EQ(d.n(), 3u);
  EXPECT_EQ(d.ids, (std::vector<std::string>{"F1", "M1", "C1"}));
  EXPECT_EQ(d.snp_ids, (std::vector<std::string>{"rs1", "rs2"}));
  EXPECT_EQ(d.z(2, 1), 2.0);
  EXPECT_FALSE(d.x_observed[1]);
  EXPECT_TRUE(d.father_known[2]);
  EXPECT_DOUBLE_EQ(d.father_x(2), 1.5);
  EXPECT_FALSE(d.mother_known[2]);
  EXPECT_FALSE(d.father_known[0]);
  EXPECT_FALSE(d.mother_known[0]);
  EXPECT_EQ(d.n_obs(), 2u);
  EXPECT_EQ(d.m(), 1u);
}

TEST(LoadDataset, Errors) {
  const auto ped = trio();
  const std::string pheno = "id,X,Y\nF1,1,0\nM1,2,1\nC1,3,1\n";
  EXPECT_THROW(load_dataset(ped, "id,rs1\nF1,0\nM1,1\nZZ,1\n", pheno), ValidationError);
  EXPECT_THROW(load_dataset(ped, "id,rs1\nF1,0\nM1,3\nC1,1\n", pheno), ValidationError);
  EXPECT_THROW(load_dataset(ped, "id,rs1\nF1,0\nM1,1\nC1,1\n", "id,X,Y\nF1,1,2\n"), ValidationError);
  EXPECT_THROW(load_dataset(ped, "id,rs1\nF1,0\n", "id,X,Y\nQQ,1,0\n"), ValidationError);
  EXPECT_THROW(load_dataset(ped, "snp,rs1\nF1,0\n", pheno), ParseError);
}

TEST(SnpInfo, Parse) {
  const auto info = parse_snp_info("snp,chrom,pos\nrs1,6,100\nrs2,6,250000\n");
  ASSERT_EQ(info.size(), 2u);
  EXPECT_EQ(info[1].pos, 250000);
  EXPECT_EQ(info[0].chrom, "6");
}

TEST(Standardize, AffineMapOfObservedX) {
  const auto ped = trio();
  const auto d = load_dataset(ped, "id,rs1\nF1,0\nM1,1\nC1,2\n", "id,X,Y\nF1,1,0\nM1,2,1\nC1,3,1\n");
  const auto s = standardize(d);
  EXPECT_NEAR(s.x(0), -1.0, 1e-15);
  EXPECT_NEAR(s.x(1), 0.0, 1e-15);
  EXPECT_NEAR(s.x(2), 1.0, 1e-15);
  ASSERT_TRUE(s.scaling.has_value());
  EXPECT_DOUBLE_EQ(s.scaling->x_mean, 2.0);
}

TEST(Standardize, MomentsByRecomputation) {
  const auto s = standardize(random_dataset(5));
  std::vector<Eigen::Index> obs;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(s.n()); ++i)
    if (s.x_observed[static_cast<std::size_t>(i)]) obs.push_back(i);
  const Eigen::VectorXd xo = s.x(obs);
  EXPECT_LT(std::abs(xo.mean()), 1e-9);
  EXPECT_LT(std::abs(sample_sd(xo) - 1.0), 1e-9);
  for (Eigen::Index c = 0; c < s.z.cols(); ++c) {
    EXPECT_LT(std::abs(s.z.col(c).mean()), 1e-9);
    EXPECT_LT(std::abs(sample_sd(s.z.col(c)) - 1.0), 1e-9);
  }
  for (Eigen::Index c = 0; c < s.family_design.cols(); ++c) {
    EXPECT_LT(std::abs(s.family_design.col(c).mean()), 1e-9);
    EXPECT_LT(std::abs(sample_sd(s.family_design.col(c)) - 1.0), 1e-9);
  }
  for (std::size_t i = 0; i < s.n(); ++i)
    if (!s.mother_known[i]) EXPECT_EQ(s.mother_x(static_cast<Eigen::Index>(i)), 0.0);
}

TEST(Standardize, Idempotent) {
  const auto once = standardize(random_dataset(6));
  const auto twice = standardize(once);
  EXPECT_LT((once.z - twice.z).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((once.x - twice.x).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((once.mother_x - twice.mother_x).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(twice.scaling->x_sd, once.scaling->x_sd, 1e-9);
}

TEST(Standardize, ConstantColumnNamed) {
  auto d = random_dataset(7);
  d.z.col(2).setConstant(1.0);
  try {
    standardize(d);
    FAIL() << "expected DegenerateColumnError";
  } catch (const DegenerateColumnError& e) {
    EXPECT_EQ(e.column(), d.snp_ids[2]);
  }
}

TEST(Partition, Examples) {
  auto d = random_dataset(8);
  std::fill(d.x_observed.begin(), d.x_observed.end(), true);
  auto all = partition_missing(d);
  for (std::size_t k = 0; k < all.permutation.size(); ++k) EXPECT_EQ(all.permutation[k], k);

  const auto ped = trio();
  const auto t = load_dataset(ped, "id,rs1\nF1,0\nM1,1\nC1,2\n", "id,X,Y\nF1,1,0\nM1,NA,1\nC1,3,1\n");
  const auto p = partition_missing(t);
  EXPECT_EQ(p.permutation, (std::vector<std::size_t>{0, 2, 1}));
  EXPECT_EQ(p.data.n_obs(), 2u);
  EXPECT_EQ(p.data.n_mis(), 1u);
  EXPECT_TRUE(p.data.is_partitioned());
}

TEST(Partition, RoundTripAndMultisets) {
  const auto d = random_dataset(9);
  const auto p = partition_missing(d);
  EXPECT_TRUE(p.data.is_partitioned());
  const auto again = permute_rows(d, p.permutation);
  EXPECT_EQ(again.ids, p.data.ids);
  EXPECT_EQ(again.z, p.data.z);
  EXPECT_EQ(again.y, p.data.y);
  auto a = d.ids, b = p.data.ids;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(d.y.sum(), p.data.y.sum());
  // Stability: observed rows keep their relative order.
  for (std::size_t k = 1; k < p.data.n_obs(); ++k) EXPECT_LT(p.permutation[k - 1], p.permutation[k]);
}

TEST(Selection, SingleAndDuplicateColumns) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd;
  const Eigen::Index n = 200;
  Eigen::MatrixXd z(n, 3);
  Eigen::VectorXd x(n);
  std::binomial_distribution<int> bin(2, 0.4);
  for (Eigen::Index i = 0; i < n; ++i) {
    z(i, 0) = bin(rng);
    z(i, 2) = bin(rng);
    x(i) = 0.6 * z(i, 0) + nd(rng);
  }
  z.col(1) = z.col(0);
  const std::vector<bool> obs(static_cast<std::size_t>(n), true);
  const auto kept = select_instruments(z, {100, 200, 5000000}, x, obs);
  ASSERT_FALSE(kept.empty());
  EXPECT_EQ(kept.front(), 0u);
  EXPECT_EQ(std::count(kept.begin(), kept.end(), 1u), 0);
  // Far apart, duplicates are both kept.
  const auto apart = select_instruments(z.leftCols(2), {100, 900000}, x, obs);
  EXPECT_EQ(apart.size(), 2u);
  EXPECT_THROW(select_instruments(z.col(2), {}, x, obs, {1e-12, 0.2, 100000}), EmptySelectionError);
}

TEST(Selection, ExhaustiveGreedyOracle) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> unif;
  const Eigen::Index n = 300, k = 50;
  Eigen::MatrixXd z(n, k);
  std::vector<long long> pos(static_cast<std::size_t>(k));
  // Blocks of correlated SNPs: each column copies its neighbour with some probability.
  for (Eigen::Index c = 0; c < k; ++c) {
    pos[static_cast<std::size_t>(c)] = 1000 + 30000 * c;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double fresh = (unif(rng) < 0.4) + (unif(rng) < 0.4);
      z(i, c) = (c > 0 && unif(rng) < 0.7) ? z(i, c - 1) : fresh;
    }
  }
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) = 0.3 * z(i, 5) + 0.3 * z(i, 20) + 0.2 * z(i, 33) + nd(rng);
  std::vector<bool> obs(static_cast<std::size_t>(n));
  for (auto&& o : obs) o = unif(rng) < 0.8;
  const SelectionOptions opts;
  const auto kept = select_instruments(z, pos, x, obs, opts);

  std::vector<double> p(static_cast<std::size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) p[static_cast<std::size_t>(c)] = marginal_association(z.col(c), x, obs).p_value;
  auto near = [&](std::size_t a, std::size_t b) { return std::llabs(pos[a] - pos[b]) <= opts.window_bp; };
  auto before = [&](std::size_t a, std::size_t b) { return p[a] < p[b] || (p[a] == p[b] && a < b); };
  auto is_kept = [&](std::size_t c) { return std::find(kept.begin(), kept.end(), c) != kept.end(); };
  for (std::size_t a : kept) {
    EXPECT_LT(p[a], opts.p_threshold);
    for (std::size_t b : kept)
      if (a != b && near(a, b)) EXPECT_LT(squared_correlation(z.col(a), z.col(b)), opts.r2_threshold);
  }
  for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
    if (p[c] >= opts.p_threshold || is_kept(c)) continue;
    bool blocked = false;
    for (std::size_t a : kept)
      if (before(a, c) && near(a, c) && squared_correlation(z.col(a), z.col(c)) >= opts.r2_threshold) blocked = true;
    EXPECT_TRUE(blocked) << "candidate " << c << " dropped without a blocking SNP";
  }

  // Column order invariance: permute columns and map back.
  std::vector<std::size_t> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::reverse(perm.begin(), perm.end());
  Eigen::MatrixXd zp(n, k);
  std::vector<long long> pp(static_cast<std::size_t>(k));
  for (std::size_t c = 0; c < perm.size(); ++c) {
    zp.col(static_cast<Eigen::Index>(c)) = z.col(static_cast<Eigen::Index>(perm[c]));
    pp[c] = pos[perm[c]];
  }
  auto kept_p = select_instruments(zp, pp, x, obs, opts);
  for (auto& c : kept_p) c = perm[c];
  std::sort(kept_p.begin(), kept_p.end());
  EXPECT_EQ(kept_p, kept);
}

TEST(SummaryStats, ExactFitAndOracles) {
  auto d = standardize(random_dataset(12));
  const auto s = summary_stats(d, nullptr);
  std::vector<Eigen::Index> obs;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d.n()); ++i)
    if (d.x_observed[static_cast<std::size_t>(i)]) obs.push_back(i);
  for (std::size_t j = 0; j < s.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(std::find(d.snp_ids.begin(), d.snp_ids.end(), s.snp_ids[j]) - d.snp_ids.begin());
    const Eigen::VectorXd zc = d.z.col(c)(obs);
    const Eigen::VectorXd xc = d.x(obs);
    const double slope = (zc.array() - zc.mean()).matrix().dot(xc) / (zc.array() - zc.mean()).square().sum();
    EXPECT_NEAR(s.beta_x(static_cast<Eigen::Index>(j)), slope, 1e-8);
    // Newton oracle: score of the logistic likelihood vanishes.
    double score0 = 0.0, score1 = 0.0;
    const auto lf = regression::logistic_irls(d.z.col(c), d.y.cast<double>());
    for (Eigen::Index i = 0; i < d.y.size(); ++i) {
      const double pr = 1.0 / (1.0 + std::exp(-(lf.coef(0) + lf.coef(1) * d.z(i, c))));
      score0 += d.y(i) - pr;
      score1 += (d.y(i) - pr) * d.z(i, c);
    }
    EXPECT_LT(std::abs(score0) + std::abs(score1), 1e-8);
    EXPECT_NEAR(s.beta_y(static_cast<Eigen::Index>(j)), lf.coef(1), 1e-12);
  }

  auto exact = d;
  for (Eigen::Index i = 0; i < exact.x.size(); ++i) exact.x(i) = 2.0 * exact.z(i, 0);
  const auto se = summary_stats(exact, nullptr);
  // A noiseless exposure leg has no usable weight and is reported as dropped.
  EXPECT_EQ(se.size(), s.size() - 1);
  ASSERT_EQ(se.dropped.size(), 1u);
  EXPECT_EQ(se.dropped[0].rfind(exact.snp_ids[0] + ":", 0), 0u);
  EXPECT_EQ(std::find(se.snp_ids.begin(), se.snp_ids.end(), exact.snp_ids[0]), se.snp_ids.end());
}

TEST(SummaryStats, CsvRoundTrip) {
  const auto s = summary_stats(standardize(random_dataset(13)), nullptr);
  const auto back = parse_summary_stats(format_summary_stats(s));
  EXPECT_EQ(back.snp_ids, s.snp_ids);
  EXPECT_EQ(back.beta_x, s.beta_x);
  EXPECT_EQ(back.se_y, s.se_y);
  EXPECT_EQ(back.p_x, s.p_x);
  EXPECT_THROW(parse_summary_stats("snp,beta_x,se_x,beta_y,se_y\nrs1,1,0,1,1\n"), ValidationError);
}

}  // namespace pedmr::dataset
