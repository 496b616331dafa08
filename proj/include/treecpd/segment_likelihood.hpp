#pragma once

// Integrated likelihood of every candidate segment and the weighted segment
// likelihood matrix log A.

#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "treecpd/errors.hpp"
#include "treecpd/log_math.hpp"
#include "treecpd/marginals.hpp"
#include "treecpd/tree_algebra.hpp"

namespace treecpd {

// Prior segment weights a_r. Missing entries of a custom table weigh 1; a
// zero weight makes the segment inadmissible.
struct SegmentPrior {
  Index min_length = 1;
  std::map<std::pair<Index, Index>, double> custom_log_weight;  // keyed by (s, t)

  bool is_uniform() const { return custom_log_weight.empty(); }

  double log_weight(Index s, Index t) const {
    if (t - s < min_length) return kNegInf;
    if (custom_log_weight.empty()) return 0.0;
    auto it = custom_log_weight.find({s, t});
    return it == custom_log_weight.end() ? 0.0 : it->second;
  }

  void validate() const {
    if (min_length < 1) throw ConfigError("minimum segment length must be >= 1");
    for (const auto& [key, lw] : custom_log_weight)
      if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity())
        throw ConfigError("segment weights must be finite and non-negative");
  }
};

// log_A(s, t) = log(a_[s,t) * p(y^[s,t))) on 1 <= s < t <= N+1, -inf elsewhere.
class SegmentLikelihoodMatrix {
 public:
  SegmentLikelihoodMatrix() = default;
  explicit SegmentLikelihoodMatrix(Index n) : n_(n), log_a_(Eigen::MatrixXd::Constant(n + 1, n + 1, kNegInf)) {}

  Index length() const { return n_; }
  double operator()(Index s, Index t) const {
    if (s < 1 || t > n_ + 1 || s >= t) return kNegInf;
    return log_a_(s - 1, t - 1);
  }
  void set(Index s, Index t, double v) { log_a_(s - 1, t - 1) = v; }

  Index finite_count() const {
    Index c = 0;
    for (Index i = 0; i < log_a_.rows(); ++i)
      for (Index j = 0; j < log_a_.cols(); ++j) c += std::isfinite(log_a_(i, j)) ? 1 : 0;
    return c;
  }

 private:
  Index n_ = 0;
  Eigen::MatrixXd log_a_;
};

// Splits [0, count) across workers; rethrows the failure of the lowest index.
template <typename Fn>
void parallel_for(Index count, int threads, Fn&& fn) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(std::max<Index>(count, 1))));
  if (threads == 1) {
    for (Index k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<size_t>(count));
  std::atomic<Index> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (Index k = next++; k < count; k = next++) {
        try {
          fn(k);
        } catch (...) {
          errors[static_cast<size_t>(k)] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Per-segment likelihood machinery over one or more replicates of the same
// shape. Replicates share structure and segmentation; continuous parameters
// are drawn independently per replicate.
class SegmentModel {
 public:
  SegmentModel(std::vector<CumulativeStats> replicates, PriorSpec prior, EdgeWeightMatrix b)
      : replicates_(std::move(replicates)), prior_(std::move(prior)), b_(std::move(b)) {
    if (replicates_.empty()) throw ConfigError("at least one dataset is required");
    n_ = replicates_.front().length();
    p_ = replicates_.front().dim();
    for (const auto& r : replicates_)
      if (r.length() != n_ || r.dim() != p_)
        throw IngestionError("replicates must share the number of time-points and variables");
    if (prior_.dim() != p_) throw ConfigError("prior dimension does not match the data");
    if (b_.dim() != p_) throw ConfigError("edge prior dimension does not match the data");
    prior_.validate();
    log_Z_b_ = log_tree_partition(b_);
    std::vector<int> all(static_cast<size_t>(p_));
    for (Index i = 0; i < p_; ++i) all[static_cast<size_t>(i)] = static_cast<int>(i);
    full_.emplace(prior_, all);
    full_->precompute(n_);
    for (Index i = 0; i < p_; ++i) {
      vertex_.emplace_back(prior_, std::vector<int>{static_cast<int>(i)});
      vertex_.back().precompute(n_);
    }
    for (Index i = 0; i < p_; ++i)
      for (Index j = i + 1; j < p_; ++j) {
        pair_.emplace_back(prior_, std::vector<int>{static_cast<int>(i), static_cast<int>(j)});
        pair_.back().precompute(n_);
      }
  }

  Index length() const { return n_; }
  Index dim() const { return p_; }
  Index replicate_count() const { return static_cast<Index>(replicates_.size()); }
  const PriorSpec& prior() const { return prior_; }
  const EdgeWeightMatrix& edge_prior() const { return b_; }
  LogValue log_Z_prior() const { return log_Z_b_; }

  // Vertex log-marginals p(y_i^r), joint over replicates and tempered.
  Eigen::VectorXd vertex_log_marginals(Index s, Index t) const {
    const auto stats = collect(s, t);
    Eigen::VectorXd lv(p_);
    for (Index i = 0; i < p_; ++i) lv(i) = joint(vertex_[static_cast<size_t>(i)], stats);
    return lv;
  }

  // Posterior edge weights log omega^(r)_ij = log b_ij + log p(y_i,y_j) - log p(y_i) - log p(y_j).
  EdgeWeightMatrix log_omega(Index s, Index t) const {
    require_tree("posterior edge weights");
    const auto stats = collect(s, t);
    Eigen::VectorXd lv(p_);
    for (Index i = 0; i < p_; ++i) lv(i) = joint(vertex_[static_cast<size_t>(i)], stats);
    return omega_from(stats, lv);
  }

  LogValue segment_log_likelihood(Index s, Index t) const {
    try {
      const auto stats = collect(s, t);
      if (prior_.backend == Backend::full) return joint(*full_, stats);
      Eigen::VectorXd lv(p_);
      for (Index i = 0; i < p_; ++i) lv(i) = joint(vertex_[static_cast<size_t>(i)], stats);
      const auto omega = omega_from(stats, lv);
      return log_tree_partition(omega) - log_Z_b_ + lv.sum();
    } catch (const Error& e) {
      std::ostringstream os;
      os << "segment [" << s << ", " << t << "): " << e.what();
      if (e.kind() == ErrorKind::numerical) throw NumericalError(os.str());
      throw;
    }
  }

  // P({i,j} in T | y^r) for every pair. Cached; concurrent callers may race
  // to fill an entry but always store identical values.
  Eigen::MatrixXd segment_edge_posterior(Index s, Index t) const {
    require_tree("segment edge posteriors");
    const auto key = key_of(s, t);
    {
      std::shared_lock lock(cache_mutex_);
      auto it = edge_cache_.find(key);
      if (it != edge_cache_.end()) return it->second;
    }
    Eigen::MatrixXd probs = edge_posterior(log_omega(s, t)).edge_prob;
    std::unique_lock lock(cache_mutex_);
    edge_cache_.emplace(key, probs);
    return probs;
  }

  Eigen::MatrixXd prior_edge_posterior() const { return edge_posterior(b_).edge_prob; }

  size_t cached_edge_posteriors() const {
    std::shared_lock lock(cache_mutex_);
    return edge_cache_.size();
  }

  // Fills every admissible entry with log a_r / temper + log p(y^r).
  SegmentLikelihoodMatrix build_A(const SegmentPrior& seg_prior, int threads = 1) const {
    seg_prior.validate();
    SegmentLikelihoodMatrix a(n_);
    parallel_for(n_, threads, [&](Index row) {
      const Index s = row + 1;
      for (Index t = s + 1; t <= n_ + 1; ++t) {
        const double lw = seg_prior.log_weight(s, t);
        if (lw == kNegInf) continue;
        a.set(s, t, lw / prior_.temper_alpha + segment_log_likelihood(s, t));
      }
    });
    return a;
  }

 private:
  void require_tree(const char* what) const {
    if (prior_.backend != Backend::tree)
      throw ConfigError(std::string(what) + " are only defined for the tree backend");
  }

  std::vector<SegmentStats> collect(Index s, Index t) const {
    std::vector<SegmentStats> stats;
    stats.reserve(replicates_.size());
    for (const auto& r : replicates_) stats.push_back(r.segment(s, t));
    return stats;
  }

  double joint(const BlockMarginal& m, const std::vector<SegmentStats>& stats) const {
    if (stats.size() == 1 && prior_.temper_alpha == 1.0) return m(stats.front());
    double total = 0.0;
    for (const auto& st : stats) total += m(st);
    return total / prior_.temper_alpha;
  }

  EdgeWeightMatrix omega_from(const std::vector<SegmentStats>& stats, const Eigen::VectorXd& lv) const {
    Eigen::MatrixXd lw = Eigen::MatrixXd::Zero(p_, p_);
    size_t k = 0;
    for (Index i = 0; i < p_; ++i)
      for (Index j = i + 1; j < p_; ++j, ++k) {
        const double v = b_.log_weight(i, j) + joint(pair_[k], stats) - lv(i) - lv(j);
        lw(i, j) = lw(j, i) = v;
      }
    return EdgeWeightMatrix(std::move(lw));
  }

  Index key_of(Index s, Index t) const {
    replicates_.front().check_segment(s, t);
    return s * (n_ + 2) + t;
  }

  std::vector<CumulativeStats> replicates_;
  PriorSpec prior_;
  EdgeWeightMatrix b_;
  Index n_ = 0;
  Index p_ = 0;
  LogValue log_Z_b_ = 0.0;
  std::optional<BlockMarginal> full_;
  std::vector<BlockMarginal> vertex_;
  std::vector<BlockMarginal> pair_;
  mutable std::shared_mutex cache_mutex_;
  mutable std::unordered_map<Index, Eigen::MatrixXd> edge_cache_;
};

}  // namespace treecpd
