#pragma once

// Synthetic piecewise-stationary Gaussian series with changing dependence
// graphs, and AUC scoring of edge posteriors against true adjacency.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "treecpd/errors.hpp"
#include "treecpd/marginals.hpp"

namespace treecpd {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent, reproducible stream for (master seed, stream index).
inline Rng stream_rng(std::uint64_t master_seed, std::uint64_t stream) {
  const std::uint64_t a = splitmix64(master_seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

using Adjacency = Eigen::MatrixXi;

// Aldous-Broder random walk on the complete graph: exactly uniform over the
// p^(p-2) spanning trees.
inline Adjacency sample_uniform_spanning_tree(Index p, Rng& rng) {
  if (p < 2) throw ConfigError("spanning tree needs p >= 2");
  Adjacency adj = Adjacency::Zero(p, p);
  std::vector<bool> visited(static_cast<size_t>(p), false);
  std::uniform_int_distribution<Index> start(0, p - 1);
  std::uniform_int_distribution<Index> step(0, p - 2);
  Index cur = start(rng);
  visited[static_cast<size_t>(cur)] = true;
  Index remaining = p - 1;
  while (remaining > 0) {
    Index next = step(rng);
    if (next >= cur) ++next;
    if (!visited[static_cast<size_t>(next)]) {
      visited[static_cast<size_t>(next)] = true;
      adj(cur, next) = adj(next, cur) = 1;
      --remaining;
    }
    cur = next;
  }
  return adj;
}

inline Adjacency sample_erdos_renyi(Index p, double p_connect, Rng& rng) {
  if (p < 2) throw ConfigError("graph needs p >= 2");
  if (!(p_connect > 0.0 && p_connect <= 1.0)) throw ConfigError("connection probability must lie in (0, 1]");
  Adjacency adj = Adjacency::Zero(p, p);
  std::bernoulli_distribution coin(p_connect);
  for (Index i = 0; i < p; ++i)
    for (Index j = i + 1; j < p; ++j)
      if (coin(rng)) adj(i, j) = adj(j, i) = 1;
  return adj;
}

// Laplacian + I, rescaled to Lambda = D Lambda0 D with D = diag(sqrt(diag(Lambda0^-1))),
// so that every variable has unit variance.
inline Eigen::MatrixXd graph_to_precision(const Adjacency& adj) {
  const Index p = adj.rows();
  if (adj.cols() != p) throw ConfigError("adjacency must be square");
  Eigen::MatrixXd lam0 = Eigen::MatrixXd::Identity(p, p);
  for (Index i = 0; i < p; ++i) {
    if (adj(i, i) != 0) throw ConfigError("adjacency must have a zero diagonal");
    for (Index j = 0; j < p; ++j) {
      if (i == j) continue;
      if (adj(i, j) != adj(j, i) || (adj(i, j) != 0 && adj(i, j) != 1))
        throw ConfigError("adjacency must be symmetric 0/1");
      if (adj(i, j)) {
        lam0(i, j) = -1.0;
        lam0(i, i) += 1.0;
      }
    }
  }
  const Eigen::MatrixXd sigma0 = lam0.llt().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::VectorXd d = sigma0.diagonal().cwiseSqrt();
  Eigen::MatrixXd lam = d.asDiagonal() * lam0 * d.asDiagonal();
  // Exact zeros off the graph.
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j)
      if (i != j && adj(i, j) == 0) lam(i, j) = 0.0;
  return lam;
}

enum class StructureKind { uniform_tree, erdos_renyi };

struct Scenario {
  StructureKind structure = StructureKind::uniform_tree;
  double p_connect = 0.2;
  Index n = 210;
  Index p = 10;
  std::vector<double> fractions{3.0 / 7.0, 1.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0};
  std::uint64_t seed = 1;
};

struct GroundTruth {
  std::vector<Index> change_points;  // interior, 1-based
  std::vector<Adjacency> adjacency_by_segment;
  std::vector<Eigen::MatrixXd> precision_by_segment;

  // Index of the segment containing time t (1-based).
  Index segment_at(Index t) const {
    return static_cast<Index>(std::upper_bound(change_points.begin(), change_points.end(), t) -
                              change_points.begin());
  }
};

// Segment starts from rounded cumulative fractions; the last segment takes
// the rounding remainder.
inline std::vector<Index> fraction_change_points(Index n, const std::vector<double>& fractions) {
  if (fractions.empty()) throw ConfigError("segment fractions must not be empty");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("segment fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("segment fractions must sum to 1");
  std::vector<Index> cps;
  double cum = 0.0;
  Index prev_end = 0;
  for (size_t k = 0; k + 1 < fractions.size(); ++k) {
    cum += fractions[k];
    const Index end = static_cast<Index>(std::llround(cum * static_cast<double>(n)));
    if (end <= prev_end || end >= n) {
      std::ostringstream os;
      os << "segment fractions leave segment " << k + 1 << " empty for N = " << n;
      throw ConfigError(os.str());
    }
    cps.push_back(end + 1);
    prev_end = end;
  }
  return cps;
}

// Draws i.i.d. zero-mean rows with the given precision on [s, t) (1-based).
inline void fill_segment(Eigen::MatrixXd& values, Index s, Index t, const Eigen::MatrixXd& precision, Rng& rng) {
  const Index p = precision.rows();
  const Eigen::MatrixXd cov = precision.llt().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd chol = cov.llt().matrixL();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(p);
  for (Index r = s - 1; r < t - 1; ++r) {
    for (Index i = 0; i < p; ++i) z(i) = normal(rng);
    values.row(r) = (chol * z).transpose();
  }
}

inline Dataset sample_from_truth(const GroundTruth& truth, Index n, Rng& rng) {
  const Index p = truth.precision_by_segment.front().rows();
  Dataset data;
  data.values.resize(n, p);
  std::vector<Index> bounds{1};
  bounds.insert(bounds.end(), truth.change_points.begin(), truth.change_points.end());
  bounds.push_back(n + 1);
  for (size_t k = 0; k + 1 < bounds.size(); ++k)
    fill_segment(data.values, bounds[k], bounds[k + 1], truth.precision_by_segment[k], rng);
  return data;
}

inline GroundTruth sample_truth(const Scenario& sc, Rng& rng) {
  if (sc.p < 2) throw ConfigError("scenario needs p >= 2");
  if (sc.n < 2) throw ConfigError("scenario needs N >= 2");
  GroundTruth truth;
  truth.change_points = fraction_change_points(sc.n, sc.fractions);
  for (size_t k = 0; k < sc.fractions.size(); ++k) {
    Adjacency adj = sc.structure == StructureKind::uniform_tree ? sample_uniform_spanning_tree(sc.p, rng)
                                                                : sample_erdos_renyi(sc.p, sc.p_connect, rng);
    truth.precision_by_segment.push_back(graph_to_precision(adj));
    truth.adjacency_by_segment.push_back(std::move(adj));
  }
  return truth;
}

// Structures from stream 0 of the scenario seed, observations from stream
// 1 + replicate. Replicates share the ground truth.
inline std::pair<Dataset, GroundTruth> generate_dataset(const Scenario& sc, std::uint64_t replicate = 0) {
  Rng structure_rng = stream_rng(sc.seed, 0);
  GroundTruth truth = sample_truth(sc, structure_rng);
  Rng data_rng = stream_rng(sc.seed, 1 + replicate);
  Dataset data = sample_from_truth(truth, sc.n, data_rng);
  return {std::move(data), std::move(truth)};
}

// Area under the ROC curve over the upper-triangle pairs, ties by midrank.
inline double auc_roc(const Eigen::MatrixXd& scores, const Adjacency& truth) {
  const Index p = scores.rows();
  if (p < 3 || scores.cols() != p || truth.rows() != p || truth.cols() != p)
    throw ConfigError("AUC needs matching p x p matrices with p >= 3");
  std::vector<std::pair<double, int>> items;
  for (Index i = 0; i < p; ++i)
    for (Index j = i + 1; j < p; ++j) items.emplace_back(scores(i, j), truth(i, j) != 0 ? 1 : 0);
  const auto positives = std::count_if(items.begin(), items.end(), [](const auto& x) { return x.second == 1; });
  const auto negatives = static_cast<std::ptrdiff_t>(items.size()) - positives;
  if (positives == 0 || negatives == 0)
    throw ConfigError("AUC is undefined when the true graph is complete or empty");
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  for (size_t k = 0; k < items.size();) {
    size_t e = k;
    while (e < items.size() && items[e].first == items[k].first) ++e;
    const double midrank = 0.5 * static_cast<double>(k + 1 + e);
    for (size_t m = k; m < e; ++m)
      if (items[m].second) rank_sum += midrank;
    k = e;
  }
  const double np = static_cast<double>(positives);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(negatives));
}

// Time-points t in 2..N where B(t) is at least both neighbours and at least
// `floor`. B is indexed by t.
inline std::vector<Index> local_maxima(const Eigen::VectorXd& B, Index n, double floor) {
  std::vector<Index> out;
  for (Index t = 2; t <= n; ++t) {
    const double v = B(t);
    if (!(v >= floor)) continue;
    if (t > 2 && B(t - 1) > v) continue;
    if (t < n && B(t + 1) > v) continue;
    out.push_back(t);
  }
  return out;
}

// Distance from each true change-point to the nearest candidate; -1 when
// there are no candidates.
inline std::vector<Index> localization_errors(const std::vector<Index>& truth, const std::vector<Index>& candidates) {
  std::vector<Index> out;
  for (Index c : truth) {
    Index best = -1;
    for (Index m : candidates) {
      const Index d = m > c ? m - c : c - m;
      if (best < 0 || d < best) best = d;
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace treecpd
