#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "model_enumeration.hpp"
#include "segmentation_enumeration.hpp"
#include "treecpd/edge_dynamics.hpp"

using namespace treecpd;

namespace {

Dataset random_dataset(Index n, Index p, std::uint64_t seed, double coupling = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.values.resize(n, p);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < p; ++c) d.values(r, c) = normal(rng);
    if (r >= n / 2) d.values(r, 1) += coupling * d.values(r, 0);
  }
  return d;
}

EdgeWeightMatrix random_b(Index p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Eigen::MatrixXd lw = Eigen::MatrixXd::Zero(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = i + 1; j < p; ++j) lw(i, j) = lw(j, i) = unif(rng);
  return EdgeWeightMatrix(lw);
}

std::vector<std::vector<double>> segment_joints(const CumulativeStats& cs, const PriorSpec& prior,
                                                const EdgeWeightMatrix& b, const std::vector<Index>& bounds) {
  const auto trees = oracle::all_trees(static_cast<int>(b.dim()));
  std::vector<std::vector<double>> out;
  for (size_t k = 0; k + 1 < bounds.size(); ++k)
    out.push_back(oracle::tree_log_joint({cs.segment(bounds[k], bounds[k + 1])}, prior, b.log_weights(), trees));
  return out;
}

}  // namespace

TEST(EdgeTime, SingleSegmentIsConstant) {
  const Dataset d = random_dataset(12, 4, 1);
  SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(4), EdgeWeightMatrix::uniform(4));
  const auto A = m.build_A(SegmentPrior{});
  const auto tab = dp_tables(A, SegmentPrior{}, 1);
  const auto et = edge_prob_over_time(segment_posteriors(tab, 1), m);
  const auto whole = m.segment_edge_posterior(1, 13);
  for (Index t = 1; t <= 12; ++t) EXPECT_LT((et.probs[static_cast<size_t>(t)] - whole).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(et.evaluated_segments, 1);
  EXPECT_TRUE(et.warnings.empty());
}

TEST(EdgeTime, TwoVariablesAlwaysOne) {
  const Dataset d = random_dataset(8, 2, 2);
  SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(2), EdgeWeightMatrix::uniform(2));
  const auto tab = dp_tables(m.build_A(SegmentPrior{}), SegmentPrior{}, 3);
  const auto et = edge_prob_over_time(segment_posteriors(tab, 3), m);
  for (Index t = 1; t <= 8; ++t) EXPECT_NEAR(et.probs[static_cast<size_t>(t)](0, 1), 1.0, 1e-12);
}

TEST(EdgeTime, MatchesJointEnumeration) {
  const Index n = 10, p = 3;
  const Dataset d = random_dataset(n, p, 3, 1.5);
  std::mt19937_64 rng(3);
  const auto b = random_b(p, rng);
  const PriorSpec prior = PriorSpec::standard(p);
  const CumulativeStats cs(d);
  SegmentModel m({cs}, prior, b);
  const auto A = m.build_A(SegmentPrior{});
  const auto tab = dp_tables(A, SegmentPrior{}, 2);
  const auto et = edge_prob_over_time(segment_posteriors(tab, 2), m, 0.0);

  // Sum over (segmentation, T_1, T_2) jointly.
  const auto trees = oracle::all_trees(static_cast<int>(p));
  std::vector<double> logw;
  std::vector<std::vector<Eigen::MatrixXd>> per_time;
  oracle::for_each_segmentation(static_cast<int>(n), 2, [&](const std::vector<int>& bd) {
    std::vector<Index> bounds(bd.begin(), bd.end());
    const auto joints = segment_joints(cs, prior, b, bounds);
    std::vector<Eigen::MatrixXd> at(static_cast<size_t>(n + 1), Eigen::MatrixXd::Zero(p, p));
    double lw = 0.0;
    for (size_t k = 0; k < joints.size(); ++k) {
      const double z = oracle::lse(joints[k]);
      lw += z - m.log_Z_prior();
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(p, p);
      for (size_t q = 0; q < trees.size(); ++q)
        for (auto [i, j] : trees[q]) {
          e(i, j) += std::exp(joints[k][q] - z);
          e(j, i) = e(i, j);
        }
      for (Index u = bounds[k]; u < bounds[k + 1]; ++u) at[static_cast<size_t>(u)] = e;
    }
    logw.push_back(lw);
    per_time.push_back(std::move(at));
  });
  const double norm = oracle::lse(logw);
  for (Index t = 1; t <= n; ++t) {
    Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(p, p);
    for (size_t q = 0; q < logw.size(); ++q) ref += std::exp(logw[q] - norm) * per_time[q][static_cast<size_t>(t)];
    EXPECT_LT((et.probs[static_cast<size_t>(t)] - ref).cwiseAbs().maxCoeff(), 1e-10) << "t=" << t;
  }
}

TEST(EdgeTime, SkippedMassIsReported) {
  const Dataset d = random_dataset(40, 3, 4, 3.0);
  SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(3), EdgeWeightMatrix::uniform(3));
  const auto tab = dp_tables(m.build_A(SegmentPrior{}), SegmentPrior{}, 3);
  const auto seg = segment_posteriors(tab, 3);
  const auto full = edge_prob_over_time(seg, m, 0.0);
  const auto cut = edge_prob_over_time(seg, m, 0.2);
  EXPECT_EQ(full.skipped_mass, 0.0);
  EXPECT_GT(cut.skipped_mass, 1e-6);
  EXPECT_FALSE(cut.warnings.empty());
  EXPECT_LT(cut.evaluated_segments, full.evaluated_segments);
  const auto threaded = edge_prob_over_time(seg, m, 0.0, 3);
  for (Index t = 1; t <= 40; ++t) EXPECT_EQ(threaded.probs[static_cast<size_t>(t)], full.probs[static_cast<size_t>(t)]);
}

TEST(EdgeStatus, MatchesEnumeration) {
  std::mt19937_64 rng(21);
  for (auto [p, cps] : {std::pair<Index, std::vector<Index>>{3, {6}}, {4, {5, 9}}, {3, {4, 8, 11}}}) {
    const Index n = 14;
    const Dataset d = random_dataset(n, p, rng(), 1.2);
    const auto b = random_b(p, rng);
    const PriorSpec prior = PriorSpec::standard(p);
    const CumulativeStats cs(d);
    SegmentModel m({cs}, prior, b);
    const StatusTriple lambda{0.3, 0.45, 0.25};
    const auto res = edge_status_comparison(m, cps, lambda);
    const auto sc = structure_comparison(m, cps, 0.4);
    const auto o = oracle::compare_by_enumeration(segment_joints(cs, prior, b, segmentation_boundaries(cps, n)),
                                                  b.log_weights(), Eigen::Vector3d(0.3, 0.45, 0.25), 0.4);
    ASSERT_EQ(res.edges.size(), o.edge_status.size());
    for (size_t e = 0; e < res.edges.size(); ++e) {
      EXPECT_NEAR(res.edges[e].posterior.absent, o.edge_status[e](0), 1e-9);
      EXPECT_NEAR(res.edges[e].posterior.mixed, o.edge_status[e](1), 1e-9);
      EXPECT_NEAR(res.edges[e].posterior.present, o.edge_status[e](2), 1e-9);
    }
    EXPECT_NEAR(sc.pi_star, o.pi_star, 1e-9);
    EXPECT_FALSE(res.trivial);
  }
}

TEST(EdgeStatus, PriorMatchingLambdaGivesQ) {
  const Dataset d = random_dataset(16, 4, 5, 1.0);
  std::mt19937_64 rng(5);
  SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(4), random_b(4, rng));
  // With K = 1 mixed is impossible, so choose lambda proportional to (q0-, q0+).
  const auto probe = edge_status_comparison(m, {}, {0.25, 0.5, 0.25});
  EXPECT_TRUE(probe.trivial);
  EXPECT_FALSE(probe.warnings.empty());
  for (const auto& e : probe.edges) {
    EXPECT_EQ(e.posterior.mixed, 0.0);
    const double post_plus = e.posterior.present / (e.posterior.present + e.posterior.absent);
    // Posterior odds = prior odds * Bayes factor (q+/q0+) / (q-/q0-).
    const double bf = (e.posterior_q.present / e.prior_q.present) / (e.posterior_q.absent / e.prior_q.absent);
    EXPECT_NEAR(post_plus / (1.0 - post_plus), bf, 1e-8 * bf);
  }
  const auto res = edge_status_comparison(m, {9}, {0.25, 0.5, 0.25});
  for (const auto& e : res.edges) {
    const StatusTriple lam{e.prior_q.absent, e.prior_q.mixed, e.prior_q.present};
    const auto again = edge_status_comparison(m, {9}, lam);
    const auto& g = again.edges[static_cast<size_t>(&e - res.edges.data())];
    EXPECT_NEAR(g.posterior.absent, e.posterior_q.absent, 1e-10);
    EXPECT_NEAR(g.posterior.mixed, e.posterior_q.mixed, 1e-10);
    EXPECT_NEAR(g.posterior.present, e.posterior_q.present, 1e-10);
    EXPECT_NEAR(e.prior_q.sum(), 1.0, 1e-12);
    EXPECT_NEAR(e.posterior_q.sum(), 1.0, 1e-12);
  }
}

TEST(EdgeStatus, UniformPriorQValues) {
  const Dataset d = random_dataset(10, 4, 6);
  SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(4), EdgeWeightMatrix::uniform(4));
  const auto res = edge_status_comparison(m, {5}, {0.25, 0.5, 0.25});
  for (const auto& e : res.edges) {
    EXPECT_NEAR(e.prior_q.present, 0.25, 1e-14);  // (1/2)^2
    EXPECT_NEAR(e.prior_q.absent, 0.25, 1e-14);
    EXPECT_NEAR(e.prior_q.mixed, 0.5, 1e-14);
  }
}

TEST(EdgeStatus, Validation) {
  const Dataset d = random_dataset(10, 3, 7);
  SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(3), EdgeWeightMatrix::uniform(3));
  EXPECT_THROW(edge_status_comparison(m, {5}, {0.0, 0.5, 0.5}), ConfigError);
  EXPECT_THROW(edge_status_comparison(m, {5}, {0.3, 0.3, 0.3}), ConfigError);
  EXPECT_THROW(edge_status_comparison(m, {5, 5}, {0.25, 0.5, 0.25}), ConfigError);
  EXPECT_THROW(edge_status_comparison(m, {11}, {0.25, 0.5, 0.25}), ConfigError);
  EXPECT_THROW(edge_status_comparison(m, {1}, {0.25, 0.5, 0.25}), ConfigError);
  EXPECT_THROW(structure_comparison(m, {5}, 1.0), ConfigError);
  EXPECT_THROW(structure_comparison(m, {5}, 0.0), ConfigError);
}

TEST(EdgeStatus, StrongerEvidenceMovesTowardPresent) {
  std::vector<double> present;
  for (double c : {0.0, 0.6, 1.5}) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset d;
    d.values.resize(60, 3);
    for (Index r = 0; r < 60; ++r) {
      d.values.row(r) << normal(rng), normal(rng), normal(rng);
      d.values(r, 1) += c * d.values(r, 0);
    }
    SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(3), EdgeWeightMatrix::uniform(3));
    present.push_back(edge_status_comparison(m, {31}, {0.25, 0.5, 0.25}).edges[0].posterior.present);
  }
  EXPECT_LT(present[0], present[1]);
  EXPECT_LT(present[1], present[2]);
  EXPECT_GT(present[2], 0.9);
}

TEST(StructureComparison, TrivialCasesAndUniformQ0) {
  const Dataset d = random_dataset(10, 3, 9);
  SegmentModel m({CumulativeStats(d)}, PriorSpec::standard(3), EdgeWeightMatrix::uniform(3));
  const auto one = structure_comparison(m, {}, 0.5);
  EXPECT_TRUE(one.trivial);
  EXPECT_EQ(one.pi_star, 1.0);
  EXPECT_FALSE(one.warnings.empty());
  const auto two = structure_comparison(m, {6}, 0.5);
  EXPECT_NEAR(std::exp(two.log_q0), 1.0 / 3.0, 1e-14);
  EXPECT_FALSE(two.trivial);
  EXPECT_GT(two.pi_star, 0.0);
  EXPECT_LT(two.pi_star, 1.0);

  const Dataset d2 = random_dataset(10, 2, 10);
  SegmentModel m2({CumulativeStats(d2)}, PriorSpec::standard(2), EdgeWeightMatrix::uniform(2));
  const auto p2 = structure_comparison(m2, {6}, 0.5);
  EXPECT_TRUE(p2.trivial);
  EXPECT_EQ(p2.pi_star, 1.0);
}
