#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "tree_enumeration.hpp"
#include "treecpd/tree_algebra.hpp"

using namespace treecpd;

namespace {

EdgeWeightMatrix random_weights(Index p, double spread, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-spread, spread);
  Eigen::MatrixXd lw = Eigen::MatrixXd::Zero(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = i + 1; j < p; ++j) lw(i, j) = lw(j, i) = unif(rng);
  return EdgeWeightMatrix(lw);
}

double handshake(const Eigen::MatrixXd& prob) {
  double s = 0.0;
  for (Index i = 0; i < prob.rows(); ++i)
    for (Index j = i + 1; j < prob.cols(); ++j) s += prob(i, j);
  return s;
}

}  // namespace

TEST(Pruefer, EnumeratesCayleyManyDistinctTrees) {
  for (int p = 2; p <= 6; ++p) {
    const auto trees = oracle::all_trees(p);
    EXPECT_EQ(static_cast<long long>(trees.size()), static_cast<long long>(std::pow(p, p - 2)));
    std::set<std::vector<oracle::Edge>> uniq;
    for (auto t : trees) {
      std::sort(t.begin(), t.end());
      EXPECT_EQ(static_cast<int>(t.size()), p - 1);
      uniq.insert(t);
    }
    EXPECT_EQ(uniq.size(), trees.size());
  }
}

TEST(TreePartition, CayleyFormula) {
  for (Index p = 2; p <= 9; ++p) {
    const double expect = static_cast<double>(p - 2) * std::log(static_cast<double>(p));
    EXPECT_NEAR(log_tree_partition(EdgeWeightMatrix::uniform(p)), expect, 1e-9 * std::max(1.0, expect));
  }
  EXPECT_NEAR(log_tree_partition(EdgeWeightMatrix::uniform(10)), std::log(1e8), 1e-9);
  EXPECT_NEAR(log_tree_partition(EdgeWeightMatrix::uniform(3)), std::log(3.0), 1e-14);
}

TEST(TreePartition, ThreeVertexWeighted) {
  Eigen::Matrix3d w;
  w << 0, 1, 2, 1, 0, 3, 2, 3, 0;
  const auto ew = EdgeWeightMatrix::from_weights(w);
  EXPECT_NEAR(log_tree_partition(ew), std::log(11.0), 1e-14);
  const auto s = edge_posterior(ew);
  EXPECT_NEAR(s.log_Z, std::log(11.0), 1e-14);
  EXPECT_NEAR(s.edge_prob(0, 1), 5.0 / 11.0, 1e-14);
  EXPECT_NEAR(s.edge_prob(0, 2), 8.0 / 11.0, 1e-14);
  EXPECT_NEAR(s.edge_prob(1, 2), 9.0 / 11.0, 1e-14);
}

TEST(EdgePosterior, UniformThreeVertex) {
  const auto s = edge_posterior(EdgeWeightMatrix::uniform(3));
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_NEAR(s.edge_prob(i, j), i == j ? 0.0 : 2.0 / 3.0, 1e-15);
}

TEST(EdgePosterior, TwoVertexIsExact) {
  Eigen::Matrix2d lw;
  lw << 0, -3.7, -3.7, 0;
  const EdgeWeightMatrix w(lw);
  EXPECT_EQ(log_tree_partition(w), -3.7);
  const auto s = edge_posterior(w);
  EXPECT_EQ(s.edge_prob(0, 1), 1.0);
  EXPECT_EQ(s.log_Z, -3.7);
}

TEST(EdgePosterior, MatchesEnumerationFiveVertices) {
  std::mt19937_64 rng(123);
  const auto w = random_weights(5, 2.0, rng);
  const auto s = edge_posterior(w);
  const auto o = oracle::enumerate(w.log_weights());
  EXPECT_NEAR(s.log_Z, o.log_Z, 1e-10 * std::abs(o.log_Z) + 1e-12);
  for (Index i = 0; i < 5; ++i)
    for (Index j = i + 1; j < 5; ++j) EXPECT_NEAR(s.edge_prob(i, j), o.edge_prob(i, j), 1e-10);
}

TEST(EdgePosterior, MatchesEnumerationRandomBatch) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Index p = 3 + trial % 4;
    const double spread = trial % 3 == 0 ? 30.0 : 3.0;
    const auto w = random_weights(p, spread, rng);
    const auto s = edge_posterior(w);
    const auto o = oracle::enumerate(w.log_weights());
    EXPECT_NEAR(s.log_Z, o.log_Z, 1e-8 * std::max(1.0, std::abs(o.log_Z)));
    EXPECT_NEAR(log_tree_partition(w), s.log_Z, 1e-12 * std::max(1.0, std::abs(o.log_Z)));
    for (Index i = 0; i < p; ++i)
      for (Index j = i + 1; j < p; ++j) {
        const double ref = o.edge_prob(i, j);
        EXPECT_NEAR(s.edge_prob(i, j), ref, 1e-8 * std::max(ref, 1e-300)) << "p=" << p << " trial " << trial;
      }
  }
}

TEST(EdgePosterior, HandshakeAndRange) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const Index p = 2 + trial % 12;
    const auto s = edge_posterior(random_weights(p, 50.0, rng));
    EXPECT_NEAR(handshake(s.edge_prob), static_cast<double>(p - 1), 1e-9);
    EXPECT_GE(s.edge_prob.minCoeff(), 0.0);
    EXPECT_LE(s.edge_prob.maxCoeff(), 1.0);
    EXPECT_TRUE(s.edge_prob.isApprox(s.edge_prob.transpose()));
  }
}

TEST(EdgePosterior, ExtremeDynamicRange) {
  // Weights spread over hundreds of log-units stay finite and consistent.
  std::mt19937_64 rng(9);
  const auto w = random_weights(6, 400.0, rng);
  const auto s = edge_posterior(w);
  const auto o = oracle::enumerate(w.log_weights());
  EXPECT_NEAR(s.log_Z, o.log_Z, 1e-9 * std::abs(o.log_Z));
  for (Index i = 0; i < 6; ++i)
    for (Index j = i + 1; j < 6; ++j) EXPECT_NEAR(s.edge_prob(i, j), o.edge_prob(i, j), 1e-9);
  EXPECT_NEAR(handshake(s.edge_prob), 5.0, 1e-9);
}

TEST(EdgePosterior, ScaleInvariance) {
  std::mt19937_64 rng(10);
  for (Index p : {3, 5, 8}) {
    const auto w = random_weights(p, 2.0, rng);
    const double log_c = 2.75;
    Eigen::MatrixXd shifted = w.log_weights().array() + log_c;
    const EdgeWeightMatrix ws(shifted);
    const auto a = edge_posterior(w);
    const auto b = edge_posterior(ws);
    EXPECT_NEAR(b.log_Z - a.log_Z, static_cast<double>(p - 1) * log_c, 1e-10);
    EXPECT_LT((a.edge_prob - b.edge_prob).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(EdgeWeightMatrix, Validation) {
  Eigen::Matrix3d lw = Eigen::Matrix3d::Zero();
  lw(0, 1) = 1.0;
  EXPECT_THROW(EdgeWeightMatrix{lw}, ConfigError);
  lw(1, 0) = 1.0;
  EXPECT_NO_THROW(EdgeWeightMatrix{lw});
  lw(0, 2) = lw(2, 0) = -std::numeric_limits<double>::infinity();
  EXPECT_THROW(EdgeWeightMatrix{lw}, ConfigError);
  EXPECT_THROW(EdgeWeightMatrix{Eigen::MatrixXd::Zero(1, 1)}, ConfigError);
  Eigen::Matrix3d w = Eigen::Matrix3d::Ones();
  w(1, 2) = w(2, 1) = 0.0;
  EXPECT_THROW(EdgeWeightMatrix::from_weights(w), ConfigError);
}

TEST(ElementwiseOps, PowerAndProduct) {
  Eigen::Matrix3d w;
  w << 0, 1, 2, 1, 0, 3, 2, 3, 0;
  const auto ew = EdgeWeightMatrix::from_weights(w);
  EXPECT_EQ(elementwise_power(ew, 1).log_weights(), ew.log_weights());
  EXPECT_NEAR(std::exp(elementwise_power(ew, 3).log_weight(0, 2)), 8.0, 1e-13);
  EXPECT_EQ(elementwise_power(EdgeWeightMatrix::uniform(4), 5).log_weights(), Eigen::MatrixXd::Zero(4, 4));
  EXPECT_THROW(elementwise_power(ew, 0), ConfigError);

  EXPECT_EQ(elementwise_product({ew}).log_weights(), ew.log_weights());
  EXPECT_LT((elementwise_product({ew, ew, ew}).log_weights() - elementwise_power(ew, 3).log_weights())
                .cwiseAbs()
                .maxCoeff(),
            1e-15);
  std::mt19937_64 rng(3);
  const auto a = random_weights(4, 1.0, rng);
  const auto b = random_weights(4, 1.0, rng);
  const auto c = elementwise_product({a, b});
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j)
      if (i != j) {
        EXPECT_DOUBLE_EQ(c.log_weight(i, j), a.log_weight(i, j) + b.log_weight(i, j));
      }
  EXPECT_THROW(elementwise_product({a, EdgeWeightMatrix::uniform(3)}), ConfigError);
  EXPECT_THROW(elementwise_product({}), ConfigError);
}

TEST(TreePartition, BitReproducible) {
  std::mt19937_64 rng(4);
  const auto w = random_weights(9, 10.0, rng);
  const double a = log_tree_partition(w);
  const auto s1 = edge_posterior(w);
  const auto s2 = edge_posterior(w);
  EXPECT_EQ(a, log_tree_partition(w));
  EXPECT_EQ(s1.edge_prob, s2.edge_prob);
}
