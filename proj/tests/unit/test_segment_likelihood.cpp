#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "model_enumeration.hpp"
#include "tree_enumeration.hpp"
#include "treecpd/segment_likelihood.hpp"

using namespace treecpd;

namespace {

Dataset random_dataset(Index n, Index p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.values.resize(n, p);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < p; ++c) d.values(r, c) = normal(rng);
  return d;
}

EdgeWeightMatrix random_b(Index p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Eigen::MatrixXd lw = Eigen::MatrixXd::Zero(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = i + 1; j < p; ++j) lw(i, j) = lw(j, i) = unif(rng);
  return EdgeWeightMatrix(lw);
}

}  // namespace

TEST(SegmentLikelihood, BackendsAgreeForTwoVariables) {
  const Dataset d = random_dataset(20, 2, 42);
  PriorSpec tree = PriorSpec::standard(2);
  PriorSpec full = tree;
  full.backend = Backend::full;
  std::mt19937_64 rng(1);
  const auto b = random_b(2, rng);
  SegmentModel mt({CumulativeStats(d)}, tree, b);
  SegmentModel mf({CumulativeStats(d)}, full, b);
  for (Index s = 1; s <= 20; ++s)
    for (Index t = s + 1; t <= 21; ++t)
      EXPECT_NEAR(mt.segment_log_likelihood(s, t), mf.segment_log_likelihood(s, t), 1e-10);
}

TEST(SegmentLikelihood, MatchesTreeEnumeration) {
  std::mt19937_64 rng(2024);
  for (Index p : {3, 4}) {
    for (int trial = 0; trial < 25; ++trial) {
      const Dataset d = random_dataset(12, p, rng());
      PriorSpec prior = PriorSpec::standard(p);
      prior.phi(0, 1) = prior.phi(1, 0) = 0.8;
      const auto b = random_b(p, rng);
      SegmentModel m({CumulativeStats(d)}, prior, b);
      const Index s = 1 + static_cast<Index>(rng() % 8);
      const Index t = s + 1 + static_cast<Index>(rng() % (12 - s));
      const auto st = CumulativeStats(d).segment(s, t);
      const double ref = oracle::tree_segment_loglik({st}, prior, b.log_weights());
      EXPECT_NEAR(m.segment_log_likelihood(s, t), ref, 1e-8 * std::abs(ref));
    }
  }
}

TEST(SegmentLikelihood, ReplicatesAndTemperingMatchEnumeration) {
  std::mt19937_64 rng(77);
  const Index p = 3;
  std::vector<CumulativeStats> reps;
  std::vector<Dataset> sets;
  for (int u = 0; u < 3; ++u) {
    sets.push_back(random_dataset(10, p, rng()));
    reps.emplace_back(sets.back());
  }
  for (double temper : {1.0, 2.0, 3.0}) {
    PriorSpec prior = PriorSpec::standard(p);
    prior.temper_alpha = temper;
    const auto b = random_b(p, rng);
    SegmentModel m(reps, prior, b);
    for (auto [s, t] : {std::pair<Index, Index>{1, 11}, {3, 7}, {5, 6}}) {
      std::vector<SegmentStats> st;
      for (const auto& r : reps) st.push_back(r.segment(s, t));
      const double ref = oracle::tree_segment_loglik(st, prior, b.log_weights());
      EXPECT_NEAR(m.segment_log_likelihood(s, t), ref, 1e-9 * std::abs(ref));
    }
  }
}

TEST(SegmentLikelihood, FullBackendWithReplicatesIsTemperedSum) {
  const Index p = 3;
  const Dataset a = random_dataset(9, p, 1), b = random_dataset(9, p, 2);
  PriorSpec prior = PriorSpec::standard(p);
  prior.backend = Backend::full;
  prior.temper_alpha = 2.0;
  SegmentModel m({CumulativeStats(a), CumulativeStats(b)}, prior, EdgeWeightMatrix::uniform(p));
  const std::vector<int> all{0, 1, 2};
  const double expect =
      0.5 * (log_block_marginal(CumulativeStats(a).segment(2, 8), all, prior) +
             log_block_marginal(CumulativeStats(b).segment(2, 8), all, prior));
  EXPECT_NEAR(m.segment_log_likelihood(2, 8), expect, 1e-12);
}

TEST(SegmentLikelihood, BuildACountsAndValues) {
  const Dataset d = random_dataset(3, 3, 5);
  SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(3), EdgeWeightMatrix::uniform(3));
  SegmentPrior sp;
  const auto A = m.build_A(sp);
  EXPECT_EQ(A.finite_count(), 6);
  for (Index s = 1; s <= 3; ++s)
    for (Index t = s + 1; t <= 4; ++t) EXPECT_EQ(A(s, t), m.segment_log_likelihood(s, t));
  EXPECT_EQ(A(2, 2), kNegInf);
  EXPECT_EQ(A(3, 2), kNegInf);
  EXPECT_EQ(A(0, 2), kNegInf);
}

TEST(SegmentLikelihood, BuildAWithWeightsAndMinimumLength) {
  const Dataset d = random_dataset(8, 3, 6);
  SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(3), EdgeWeightMatrix::uniform(3));
  SegmentPrior sp;
  sp.min_length = 2;
  sp.custom_log_weight[{1, 4}] = std::log(0.5);
  sp.custom_log_weight[{4, 9}] = kNegInf;
  const auto A = m.build_A(sp, 3);
  for (Index s = 1; s <= 8; ++s)
    for (Index t = s + 1; t <= 9; ++t) {
      double expect = m.segment_log_likelihood(s, t);
      if (t - s < 2 || (s == 4 && t == 9)) expect = kNegInf;
      if (s == 1 && t == 4) expect += std::log(0.5);
      EXPECT_EQ(A(s, t), expect) << s << "," << t;
    }
}

TEST(SegmentLikelihood, ThreadCountDoesNotChangeA) {
  const Dataset d = random_dataset(25, 4, 9);
  SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(4), EdgeWeightMatrix::uniform(4));
  SegmentPrior sp;
  const auto a1 = m.build_A(sp, 1);
  const auto a4 = m.build_A(sp, 4);
  for (Index s = 1; s <= 25; ++s)
    for (Index t = s + 1; t <= 26; ++t) EXPECT_EQ(a1(s, t), a4(s, t));
}

TEST(SegmentLikelihood, EdgePosteriorsAndCache) {
  const Dataset d = random_dataset(10, 3, 10);
  std::mt19937_64 rng(3);
  const auto b = random_b(3, rng);
  const PriorSpec prior = PriorSpec::standard(3);
  SegmentModel m({CumulativeStats(d)}, prior, b);
  const auto probs = m.segment_edge_posterior(2, 9);
  EXPECT_EQ(m.cached_edge_posteriors(), 1u);
  EXPECT_EQ(probs, m.segment_edge_posterior(2, 9));
  EXPECT_EQ(probs, edge_posterior(m.log_omega(2, 9)).edge_prob);

  // 3-tree enumeration of P(T | y^r).
  const auto trees = oracle::all_trees(3);
  const auto lj = oracle::tree_log_joint({CumulativeStats(d).segment(2, 9)}, prior, b.log_weights(), trees);
  const double norm = oracle::lse(lj);
  Eigen::Matrix3d ref = Eigen::Matrix3d::Zero();
  for (size_t k = 0; k < trees.size(); ++k)
    for (auto [i, j] : trees[k]) ref(i, j) += std::exp(lj[k] - norm);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) EXPECT_NEAR(probs(i, j), ref(i, j), 1e-10);

  // Concurrent lazy population gives the same values.
  std::vector<std::thread> pool;
  for (int w = 0; w < 4; ++w)
    pool.emplace_back([&] {
      for (Index s = 1; s <= 10; ++s)
        for (Index t = s + 1; t <= 11; ++t) m.segment_edge_posterior(s, t);
    });
  for (auto& th : pool) th.join();
  EXPECT_EQ(m.cached_edge_posteriors(), 55u);
  for (Index s = 1; s <= 10; ++s)
    for (Index t = s + 1; t <= 11; ++t)
      EXPECT_EQ(m.segment_edge_posterior(s, t), edge_posterior(m.log_omega(s, t)).edge_prob);
}

TEST(SegmentLikelihood, EdgePosteriorSpecialCases) {
  const Dataset d2 = random_dataset(6, 2, 1);
  SegmentModel m2({CumulativeStats(d2)}, PriorSpec::standard(2), EdgeWeightMatrix::uniform(2));
  EXPECT_EQ(m2.segment_edge_posterior(1, 7)(0, 1), 1.0);

  std::mt19937_64 rng(2);
  const auto b = random_b(4, rng);
  SegmentModel m4({CumulativeStats(random_dataset(6, 4, 2))}, PriorSpec::standard(4), b);
  EXPECT_EQ(m4.prior_edge_posterior(), edge_posterior(b).edge_prob);

  PriorSpec full = PriorSpec::standard(4);
  full.backend = Backend::full;
  SegmentModel mf({CumulativeStats(random_dataset(6, 4, 2))}, full, b);
  EXPECT_THROW(mf.segment_edge_posterior(1, 4), ConfigError);
  EXPECT_THROW(mf.log_omega(1, 4), ConfigError);
}

TEST(SegmentLikelihood, DependentDataRaisesEdgeWeights) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = 400;
  Dataset indep, dep;
  indep.values.resize(n, 3);
  dep.values.resize(n, 3);
  for (Index r = 0; r < n; ++r) {
    const double z = normal(rng);
    indep.values.row(r) << normal(rng), normal(rng), normal(rng);
    dep.values.row(r) << z, 0.9 * z + 0.45 * normal(rng), normal(rng);
  }
  const PriorSpec prior = PriorSpec::standard(3);
  SegmentModel mi({CumulativeStats(indep)}, prior, EdgeWeightMatrix::uniform(3));
  SegmentModel md({CumulativeStats(dep)}, prior, EdgeWeightMatrix::uniform(3));
  const double wi = mi.log_omega(1, n + 1).log_weight(0, 1);
  const double wd = md.log_omega(1, n + 1).log_weight(0, 1);
  EXPECT_LT(std::abs(wi), 10.0);
  EXPECT_GT(wd, 100.0);
}

TEST(SegmentLikelihood, ShapeMismatchAndErrorsAreAnnotated) {
  const Dataset a = random_dataset(8, 3, 1), b = random_dataset(9, 3, 2);
  EXPECT_THROW(SegmentModel({CumulativeStats(a), CumulativeStats(b)}, PriorSpec::standard(3),
                            EdgeWeightMatrix::uniform(3)),
               IngestionError);
  EXPECT_THROW(SegmentModel({CumulativeStats(a)}, PriorSpec::standard(4), EdgeWeightMatrix::uniform(3)),
               ConfigError);
  SegmentModel m({CumulativeStats(a)}, PriorSpec::standard(3), EdgeWeightMatrix::uniform(3));
  EXPECT_THROW(m.segment_log_likelihood(4, 4), ConfigError);
  EXPECT_THROW(m.segment_log_likelihood(0, 3), ConfigError);
}

TEST(ParallelFor, RethrowsLowestIndexFailure) {
  std::vector<int> hits(50, 0);
  try {
    parallel_for(50, 4, [&](Index k) {
      hits[static_cast<size_t>(k)] = 1;
      if (k == 17 || k == 31) throw ConfigError("fail " + std::to_string(k));
    });
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "fail 17");
  }
  EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 50);
}
