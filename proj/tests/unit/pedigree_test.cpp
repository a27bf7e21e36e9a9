#include "pedmr/pedigree.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gene_drop.hpp"
#include "pedmr/error.hpp"
#include "pedmr/simulate.hpp"

namespace pedmr::pedigree {
namespace {

Pedigree parse(const std::string& body) { return parse_pedigree("family id father mother sex affected\n" + body); }

double phi_of(const KinshipMatrix& k, const Pedigree& ped, const std::string& a, const std::string& b) {
  return k.phi(static_cast<Eigen::Index>(*ped.index_of(a)), static_cast<Eigen::Index>(*ped.index_of(b)));
}

const char* kCousins =
    "F GF 0 0 1 NA\n"
    "F GM 0 0 2 NA\n"
    "F S1 GF GM 1 0\n"
    "F S2 GF GM 2 0\n"
    "F W1 0 0 2 NA\n"
    "F H2 0 0 1 NA\n"
    "F C1 S1 W1 1 1\n"
    "F C2 H2 S2 2 0\n";

const char* kHalfSibMating =
    "F A 0 0 1 NA\n"
    "F B 0 0 2 NA\n"
    "F C 0 0 2 NA\n"
    "F D A B 1 NA\n"
    "F E A C 2 NA\n"
    "F X D E 1 1\n";

}  // namespace

TEST(Pedigree, Trio) {
  const auto ped = parse("T F1 0 0 1 0\nT M1 0 0 2 0\nT C1 F1 M1 1 1\n");
  EXPECT_EQ(ped.size(), 3u);
  EXPECT_EQ(ped.founder_count(), 2u);
  EXPECT_EQ(ped.father(2), 0);
  EXPECT_EQ(ped.mother(2), 1);
  EXPECT_EQ(ped[2].affected, 1);
  EXPECT_TRUE(ped[0].is_founder());
}

TEST(Pedigree, FileOrderIsFree) {
  const auto ped = parse("T C1 F1 M1 M 1\nT M1 0 0 F 0\nT F1 0 0 M 0\n");
  const auto& topo = ped.topological_order();
  auto pos = [&](std::size_t i) { return std::find(topo.begin(), topo.end(), i) - topo.begin(); };
  EXPECT_LT(pos(1), pos(0));
  EXPECT_LT(pos(2), pos(0));
  const auto k = kinship_matrix(ped);
  EXPECT_DOUBLE_EQ(phi_of(k, ped, "C1", "F1"), 0.25);
}

TEST(Pedigree, Errors) {
  EXPECT_THROW(parse("T A 0 0 1 0\nT A 0 0 2 0\n"), ValidationError);
  EXPECT_THROW(parse("T A Z 0 1 0\n"), ValidationError);
  EXPECT_THROW(parse("T A B 0 1 0\nT B 0 0 1 0\n"), ValidationError);
  EXPECT_THROW(parse("T A B C 1 0\nT B A C 1 0\nT C 0 0 2 0\n"), ValidationError);
  EXPECT_THROW(parse("T A 0 0 1 0\nT B 0 0 2 0\nU C A B 1 0\n"), ValidationError);
  EXPECT_THROW(parse("T A 0 0 7 0\n"), ParseError);
  EXPECT_THROW(parse("T A 0 0 1 maybe\n"), ParseError);
  EXPECT_THROW(parse("T A 0 0 1\n"), ParseError);
  EXPECT_THROW(parse_pedigree(""), ParseError);
}

TEST(Pedigree, FormatRoundTrip) {
  const auto ped = parse(kCousins);
  const auto again = parse_pedigree(format_pedigree(ped));
  ASSERT_EQ(again.size(), ped.size());
  for (std::size_t i = 0; i < ped.size(); ++i) {
    EXPECT_EQ(again[i].id, ped[i].id);
    EXPECT_EQ(again[i].father_id, ped[i].father_id);
    EXPECT_EQ(again[i].sex, ped[i].sex);
    EXPECT_EQ(again[i].affected, ped[i].affected);
  }
}

TEST(Kinship, ClosedFormRelationships) {
  const auto ped = parse(kCousins);
  const auto k = kinship_matrix(ped);
  EXPECT_DOUBLE_EQ(phi_of(k, ped, "GF", "GF"), 0.5);
  EXPECT_DOUBLE_EQ(phi_of(k, ped, "GF", "GM"), 0.0);
  EXPECT_DOUBLE_EQ(phi_of(k, ped, "S1", "GF"), 0.25);
  EXPECT_DOUBLE_EQ(phi_of(k, ped, "S1", "S2"), 0.25);
  EXPECT_DOUBLE_EQ(phi_of(k, ped, "C1", "C2"), 0.0625);
  const auto inbred = parse(kHalfSibMating);
  const auto ki = kinship_matrix(inbred);
  EXPECT_DOUBLE_EQ(phi_of(ki, inbred, "X", "X"), 0.5625);
}

TEST(Kinship, GeneDroppingOracle) {
  for (const char* text : {kCousins, kHalfSibMating}) {
    const auto ped = parse(text);
    const auto k = kinship_matrix(ped);
    const int reps = 100000;
    const auto mc = pedmr::testing::gene_drop_kinship(ped, reps, 17);
    for (Eigen::Index i = 0; i < k.phi.rows(); ++i)
      for (Eigen::Index j = 0; j < k.phi.cols(); ++j) {
        // Per-replicate estimates lie in [0, 1], so their variance is at most p(1 - p).
        const double p = k.phi(i, j);
        const double se = std::sqrt(std::max(p * (1.0 - p), 1e-6) / reps);
        EXPECT_NEAR(mc(i, j), p, std::max(3.0 * se, 1e-12)) << i << "," << j;
      }
  }
}

TEST(Kinship, SymmetricAndBlockDiagonalAcrossFamilies) {
  const auto ped = simulate::simulate_pedigree(3, 4, 2, 5);
  const auto k = kinship_matrix(ped);
  EXPECT_LT((k.phi - k.phi.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  for (std::size_t i = 0; i < ped.size(); ++i)
    for (std::size_t j = 0; j < ped.size(); ++j)
      if (ped.family_index(i) != ped.family_index(j))
        EXPECT_EQ(k.phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), 0.0);
  for (Eigen::Index i = 0; i < k.phi.rows(); ++i) EXPECT_GE(k.phi(i, i), 0.5);
}

TEST(Kinship, SubsetAndPermutation) {
  const auto ped = parse(kCousins);
  const auto k = kinship_matrix(ped);
  const auto s = k.subset({"C2", "C1", "GF"});
  EXPECT_EQ(s.order, (std::vector<std::string>{"C2", "C1", "GF"}));
  EXPECT_DOUBLE_EQ(s.phi(0, 1), 0.0625);
  EXPECT_DOUBLE_EQ(s.phi(2, 1), 0.125);
  const auto p = k.permuted({7, 6, 5, 4, 3, 2, 1, 0});
  EXPECT_EQ(p.order.front(), "C2");
  EXPECT_DOUBLE_EQ(p.phi(0, 1), 0.0625);
  EXPECT_THROW(k.subset({"nobody"}), ValidationError);
}

TEST(RelationshipCholesky, ClosedForms) {
  KinshipMatrix id{{"a", "b"}, Eigen::Matrix2d::Identity() * 0.5};
  const auto l = relationship_cholesky(id, 2.0);
  EXPECT_EQ(l, Eigen::MatrixXd(Eigen::Matrix2d::Identity()));
  KinshipMatrix two{{"a", "b"}, (Eigen::Matrix2d() << 0.5, 0.25, 0.25, 0.5).finished()};
  const auto l2 = relationship_cholesky(two, 2.0);
  EXPECT_NEAR(l2(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(l2(1, 0), 0.5, 1e-15);
  EXPECT_NEAR(l2(1, 1), std::sqrt(0.75), 1e-15);
  EXPECT_EQ(l2(0, 1), 0.0);
}

TEST(RelationshipCholesky, ReconstructsRandomPedigrees) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ped = simulate::simulate_pedigree(2, 3, 3, seed);
    const auto k = kinship_matrix(ped);
    double jitter = -1.0;
    const auto l = relationship_cholesky(k, 2.0, jitter);
    EXPECT_EQ(jitter, 0.0);
    EXPECT_LT((l * l.transpose() - 2.0 * k.phi).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT(l.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff(), 1e-300);
    for (Eigen::Index i = 0; i < l.rows(); ++i) EXPECT_GE(l(i, i), 0.0);
  }
}

TEST(RelationshipCholesky, JitterAndFailure) {
  // Identical twins give a singular matrix that needs a small jitter.
  KinshipMatrix twins{{"a", "b"}, (Eigen::Matrix2d() << 0.5, 0.5, 0.5, 0.5).finished()};
  double jitter = 0.0;
  const auto l = relationship_cholesky(twins, 2.0, jitter);
  EXPECT_GT(jitter, 0.0);
  EXPECT_LE(jitter, 1e-6);
  EXPECT_LT((l * l.transpose() - Eigen::Matrix2d::Constant(1.0)).cwiseAbs().maxCoeff(), 2e-6);
  KinshipMatrix neg{{"a", "b"}, (Eigen::Matrix2d() << 0.5, 1.0, 1.0, 0.5).finished()};
  EXPECT_THROW(relationship_cholesky(neg, 2.0), NotPositiveDefiniteError);
  EXPECT_THROW(relationship_cholesky(twins, 0.0), ValidationError);
}

}  // namespace pedmr::pedigree
