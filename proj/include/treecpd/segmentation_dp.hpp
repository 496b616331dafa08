#pragma once

// Exact integration over segmentations with K segments.
//
// With A the weighted segment-likelihood matrix, [A^K]_{1,N+1} sums
// prod_r a_r p(y^r) over all segmentations into K segments. Everything here
// runs in log-space: the forward table holds log [A^k]_{1,t}, the backward
// table log [A^k]_{t,N+1}. A^0 is the identity.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "treecpd/errors.hpp"
#include "treecpd/log_math.hpp"
#include "treecpd/segment_likelihood.hpp"

namespace treecpd {

// log a_r / temper on admissible segments: the matrix whose powers give C_K(a).
inline SegmentLikelihoodMatrix weight_matrix(const SegmentPrior& seg_prior, Index n, double temper = 1.0) {
  SegmentLikelihoodMatrix w(n);
  for (Index s = 1; s <= n; ++s)
    for (Index t = s + 1; t <= n + 1; ++t) {
      const double lw = seg_prior.log_weight(s, t);
      if (lw != kNegInf) w.set(s, t, lw / temper);
    }
  return w;
}

namespace detail {

// table[k](t) = log [A^k]_{1,t}, k = 0..k_max, t = 1..N+1 (index 0 unused).
inline std::vector<Eigen::VectorXd> forward_powers(const SegmentLikelihoodMatrix& a, Index k_max) {
  const Index n = a.length();
  std::vector<Eigen::VectorXd> f(static_cast<size_t>(k_max + 1), Eigen::VectorXd::Constant(n + 2, kNegInf));
  f[0](1) = 0.0;
  for (Index k = 1; k <= k_max; ++k) {
    const auto& prev = f[static_cast<size_t>(k - 1)];
    auto& cur = f[static_cast<size_t>(k)];
    for (Index t = 2; t <= n + 1; ++t) {
      LogSumAccumulator acc;
      for (Index u = 1; u < t; ++u)
        if (prev(u) != kNegInf) acc.add(prev(u) + a(u, t));
      cur(t) = acc.value();
    }
  }
  return f;
}

// table[k](s) = log [A^k]_{s,N+1}.
inline std::vector<Eigen::VectorXd> backward_powers(const SegmentLikelihoodMatrix& a, Index k_max) {
  const Index n = a.length();
  std::vector<Eigen::VectorXd> g(static_cast<size_t>(k_max + 1), Eigen::VectorXd::Constant(n + 2, kNegInf));
  g[0](n + 1) = 0.0;
  for (Index k = 1; k <= k_max; ++k) {
    const auto& prev = g[static_cast<size_t>(k - 1)];
    auto& cur = g[static_cast<size_t>(k)];
    for (Index s = 1; s <= n; ++s) {
      LogSumAccumulator acc;
      for (Index v = s + 1; v <= n + 1; ++v)
        if (prev(v) != kNegInf) acc.add(a(s, v) + prev(v));
      cur(s) = acc.value();
    }
  }
  return g;
}

}  // namespace detail

struct DPTables {
  Index n = 0;
  Index k_max = 0;
  SegmentLikelihoodMatrix log_A;
  std::vector<Eigen::VectorXd> forward;   // log [A^k]_{1,t}
  std::vector<Eigen::VectorXd> backward;  // log [A^k]_{t,N+1}
  Eigen::VectorXd log_C;                  // log C_K(a), index K = 1..k_max

  double log_total(Index k) const { return forward[static_cast<size_t>(k)](n + 1); }
};

// Largest K with at least one admissible segmentation.
inline Index max_admissible_segments(const SegmentLikelihoodMatrix& a, Index k_cap) {
  const auto f = detail::forward_powers(a, k_cap);
  Index best = 0;
  for (Index k = 1; k <= k_cap; ++k)
    if (f[static_cast<size_t>(k)](a.length() + 1) != kNegInf) best = k;
  return best;
}

inline DPTables dp_tables(const SegmentLikelihoodMatrix& log_A, const SegmentPrior& seg_prior, Index k_max,
                          double temper = 1.0) {
  if (k_max < 1) throw ConfigError("K_max must be >= 1");
  DPTables tab;
  tab.n = log_A.length();
  tab.k_max = k_max;
  tab.log_A = log_A;
  tab.forward = detail::forward_powers(log_A, k_max);
  tab.backward = detail::backward_powers(log_A, k_max);
  const auto cw = detail::forward_powers(weight_matrix(seg_prior, tab.n, temper), k_max);
  tab.log_C = Eigen::VectorXd::Constant(k_max + 1, kNegInf);
  for (Index k = 1; k <= k_max; ++k) {
    tab.log_C(k) = cw[static_cast<size_t>(k)](tab.n + 1);
    if (tab.log_total(k) == kNegInf || tab.log_C(k) == kNegInf) {
      std::ostringstream os;
      os << "no admissible segmentation into K = " << k << " segments (N = " << tab.n
         << ", minimum length " << seg_prior.min_length << ")";
      throw ConfigError(os.str());
    }
  }
  return tab;
}

// log C_K(a) from the same DP run on the weight-only matrix.
inline LogValue segmentation_constant(const SegmentPrior& seg_prior, Index n, Index k, double temper = 1.0) {
  if (k < 1) throw ConfigError("K must be >= 1");
  if (k > n) {
    std::ostringstream os;
    os << "K = " << k << " exceeds N = " << n;
    throw ConfigError(os.str());
  }
  const auto f = detail::forward_powers(weight_matrix(seg_prior, n, temper), k);
  return f[static_cast<size_t>(k)](n + 1);
}

// log p(y | K) = log [A^K]_{1,N+1} - log C_K(a).
inline LogValue log_evidence(const DPTables& tab, Index k) {
  if (k < 1 || k > tab.k_max) throw ConfigError("K out of the tabulated range");
  return tab.log_total(k) - tab.log_C(k);
}

struct KPrior {
  enum class Kind { truncated_poisson, uniform };
  Kind kind = Kind::truncated_poisson;
  double gamma = 4.0;
  Index k_max = 10;

  void validate() const {
    if (k_max < 1) throw ConfigError("K_max must be >= 1");
    if (kind == Kind::truncated_poisson && !(gamma > 0.0)) throw ConfigError("Poisson gamma must be > 0");
  }

  // Normalized log-probabilities over K = 1..upto (index 0 unused).
  Eigen::VectorXd log_probs(Index upto) const {
    Eigen::VectorXd lp = Eigen::VectorXd::Constant(upto + 1, kNegInf);
    for (Index k = 1; k <= upto; ++k)
      lp(k) = kind == Kind::uniform ? 0.0 : static_cast<double>(k) * std::log(gamma) - std::lgamma(k + 1.0);
    std::vector<double> terms(lp.data() + 1, lp.data() + upto + 1);
    const double norm = log_sum_exp(terms);
    for (Index k = 1; k <= upto; ++k) lp(k) -= norm;
    return lp;
  }
};

// p(K | y) over K = 1..tab.k_max (index 0 unused, zero).
inline Eigen::VectorXd posterior_K(const DPTables& tab, const KPrior& kprior) {
  const Eigen::VectorXd lp = kprior.log_probs(tab.k_max);
  std::vector<double> joint(static_cast<size_t>(tab.k_max));
  for (Index k = 1; k <= tab.k_max; ++k) joint[static_cast<size_t>(k - 1)] = lp(k) + log_evidence(tab, k);
  const double norm = log_sum_exp(joint);
  Eigen::VectorXd post = Eigen::VectorXd::Zero(tab.k_max + 1);
  for (Index k = 1; k <= tab.k_max; ++k) post(k) = std::exp(joint[static_cast<size_t>(k - 1)] - norm);
  return post;
}

// Change-point posteriors for a fixed K. Vectors are indexed by t = 0..N+1;
// only t = 2..N can carry mass.
struct ChangepointPosterior {
  Index K = 0;
  std::vector<Eigen::VectorXd> by_k;  // by_k[k-1](t) = B_{K,k}(t), k = 1..K-1
  Eigen::VectorXd total;              // B_K(t)
};

inline ChangepointPosterior changepoint_posteriors(const DPTables& tab, Index K) {
  if (K < 1 || K > tab.k_max) throw ConfigError("K out of the tabulated range");
  ChangepointPosterior out;
  out.K = K;
  out.total = Eigen::VectorXd::Zero(tab.n + 2);
  const double denom = tab.log_total(K);
  for (Index k = 1; k < K; ++k) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(tab.n + 2);
    const auto& f = tab.forward[static_cast<size_t>(k)];
    const auto& g = tab.backward[static_cast<size_t>(K - k)];
    for (Index t = 2; t <= tab.n; ++t) b(t) = std::exp(f(t) + g(t) - denom);
    out.total += b;
    out.by_k.push_back(std::move(b));
  }
  return out;
}

// B(t) = sum_{K >= 2} p(K | y) B_K(t).
inline Eigen::VectorXd integrated_changepoint_posterior(const Eigen::VectorXd& post_K,
                                                        const std::vector<ChangepointPosterior>& by_K) {
  Eigen::VectorXd b;
  for (const auto& cp : by_K) {
    if (b.size() == 0) b = Eigen::VectorXd::Zero(cp.total.size());
    if (cp.K >= 2) b += post_K(cp.K) * cp.total;
  }
  return b;
}

// Posterior probability that [s, t) is a segment, stored on the (N+1)^2 grid.
class SegmentPosterior {
 public:
  SegmentPosterior() = default;
  SegmentPosterior(Index n, Index K) : n_(n), K_(K), prob_(Eigen::MatrixXd::Zero(n + 1, n + 1)) {}
  Index length() const { return n_; }
  Index K() const { return K_; }
  double operator()(Index s, Index t) const {
    if (s < 1 || t > n_ + 1 || s >= t) return 0.0;
    return prob_(s - 1, t - 1);
  }
  void add(Index s, Index t, double v) { prob_(s - 1, t - 1) += v; }

 private:
  Index n_ = 0;
  Index K_ = 0;
  Eigen::MatrixXd prob_;
};

// S_{K,k}([s,t)) = [A^{k-1}]_{1,s} A_{s,t} [A^{K-k}]_{t,N+1} / [A^K]_{1,N+1}.
inline SegmentPosterior segment_posteriors_by_k(const DPTables& tab, Index K, Index k) {
  if (K < 1 || K > tab.k_max || k < 1 || k > K) throw ConfigError("segment posterior index out of range");
  SegmentPosterior out(tab.n, K);
  const double denom = tab.log_total(K);
  const auto& f = tab.forward[static_cast<size_t>(k - 1)];
  const auto& g = tab.backward[static_cast<size_t>(K - k)];
  for (Index s = 1; s <= tab.n; ++s) {
    if (f(s) == kNegInf) continue;
    for (Index t = s + 1; t <= tab.n + 1; ++t) {
      const double la = tab.log_A(s, t);
      if (la == kNegInf || g(t) == kNegInf) continue;
      out.add(s, t, std::exp(f(s) + la + g(t) - denom));
    }
  }
  return out;
}

inline SegmentPosterior segment_posteriors(const DPTables& tab, Index K) {
  if (K < 1 || K > tab.k_max) throw ConfigError("K out of the tabulated range");
  SegmentPosterior out(tab.n, K);
  const double denom = tab.log_total(K);
  for (Index k = 1; k <= K; ++k) {
    const auto& f = tab.forward[static_cast<size_t>(k - 1)];
    const auto& g = tab.backward[static_cast<size_t>(K - k)];
    for (Index s = 1; s <= tab.n; ++s) {
      if (f(s) == kNegInf) continue;
      for (Index t = s + 1; t <= tab.n + 1; ++t) {
        const double la = tab.log_A(s, t);
        if (la == kNegInf || g(t) == kNegInf) continue;
        out.add(s, t, std::exp(f(s) + la + g(t) - denom));
      }
    }
  }
  return out;
}

struct Segmentation {
  std::vector<Index> change_points;  // interior boundaries tau_1 < ... < tau_{K-1}, 1-based
  double log_value = kNegInf;        // sum_r log A_r of this segmentation

  Index segments() const { return static_cast<Index>(change_points.size()) + 1; }
  // Boundaries 1 = tau_0 < ... < tau_K = N + 1.
  std::vector<Index> boundaries(Index n) const {
    std::vector<Index> b{1};
    b.insert(b.end(), change_points.begin(), change_points.end());
    b.push_back(n + 1);
    return b;
  }
};

// Max-product tables for Segment Neighbourhood Search.
struct MapTables {
  Index n = 0;
  std::vector<Eigen::VectorXd> best;  // best[k](t) = max over k-segmentations of [1, t)
};

inline MapTables map_tables(const SegmentLikelihoodMatrix& log_A, Index k_max) {
  MapTables mt;
  mt.n = log_A.length();
  mt.best.assign(static_cast<size_t>(k_max + 1), Eigen::VectorXd::Constant(mt.n + 2, kNegInf));
  mt.best[0](1) = 0.0;
  for (Index k = 1; k <= k_max; ++k) {
    const auto& prev = mt.best[static_cast<size_t>(k - 1)];
    auto& cur = mt.best[static_cast<size_t>(k)];
    for (Index t = 2; t <= mt.n + 1; ++t) {
      double m = kNegInf;
      for (Index u = 1; u < t; ++u)
        if (prev(u) != kNegInf) m = std::max(m, prev(u) + log_A(u, t));
      cur(t) = m;
    }
  }
  return mt;
}

// Backtracks the best K-segmentation; among equal candidates the smallest
// change-point index wins at every step.
inline Segmentation backtrack_map(const SegmentLikelihoodMatrix& log_A, const MapTables& mt, Index K) {
  const Index n = mt.n;
  Segmentation seg;
  seg.log_value = mt.best[static_cast<size_t>(K)](n + 1);
  if (seg.log_value == kNegInf) {
    std::ostringstream os;
    os << "no admissible segmentation into K = " << K << " segments";
    throw ConfigError(os.str());
  }
  Index t = n + 1;
  for (Index k = K; k >= 2; --k) {
    const auto& prev = mt.best[static_cast<size_t>(k - 1)];
    Index arg = 0;
    double m = kNegInf;
    for (Index u = 1; u < t; ++u) {
      if (prev(u) == kNegInf) continue;
      const double v = prev(u) + log_A(u, t);
      if (v > m) {
        m = v;
        arg = u;
      }
    }
    seg.change_points.push_back(arg);
    t = arg;
  }
  std::reverse(seg.change_points.begin(), seg.change_points.end());
  return seg;
}

inline Segmentation map_segmentation(const SegmentLikelihoodMatrix& log_A, Index K) {
  if (K < 1) throw ConfigError("K must be >= 1");
  return backtrack_map(log_A, map_tables(log_A, K), K);
}

struct PosteriorSummary {
  Index n = 0;
  Index k_max = 0;
  Eigen::VectorXd log_evidence_by_K;  // index K
  Eigen::VectorXd log_C_by_K;
  Eigen::VectorXd posterior_K;
  std::vector<ChangepointPosterior> changepoints;  // one per K = 1..k_max
  Eigen::VectorXd B;                               // integrated over K
  std::vector<SegmentPosterior> segments;          // S_K, one per K = 1..k_max
  std::vector<Segmentation> map_by_K;              // per-K MAP, K = 1..k_max
  Eigen::VectorXd map_log_joint_by_K;              // log p(K) + log p(m_K | K) + log p(y | m_K)
  Index K_hat_1 = 0;                               // argmax_K p(K | y)
  Index K_hat_2 = 0;                               // K of the global MAP segmentation
};

inline PosteriorSummary summarize(const DPTables& tab, const KPrior& kprior) {
  PosteriorSummary out;
  out.n = tab.n;
  out.k_max = tab.k_max;
  out.log_evidence_by_K = Eigen::VectorXd::Constant(tab.k_max + 1, kNegInf);
  out.log_C_by_K = tab.log_C;
  for (Index k = 1; k <= tab.k_max; ++k) out.log_evidence_by_K(k) = log_evidence(tab, k);
  out.posterior_K = posterior_K(tab, kprior);
  for (Index k = 1; k <= tab.k_max; ++k) {
    out.changepoints.push_back(changepoint_posteriors(tab, k));
    out.segments.push_back(segment_posteriors(tab, k));
  }
  out.B = integrated_changepoint_posterior(out.posterior_K, out.changepoints);

  const MapTables mt = map_tables(tab.log_A, tab.k_max);
  const Eigen::VectorXd lp = kprior.log_probs(tab.k_max);
  out.map_log_joint_by_K = Eigen::VectorXd::Constant(tab.k_max + 1, kNegInf);
  double best_joint = kNegInf;
  double best_post = -1.0;
  for (Index k = 1; k <= tab.k_max; ++k) {
    out.map_by_K.push_back(backtrack_map(tab.log_A, mt, k));
    const double joint = lp(k) - tab.log_C(k) + out.map_by_K.back().log_value;
    out.map_log_joint_by_K(k) = joint;
    if (joint > best_joint) {
      best_joint = joint;
      out.K_hat_2 = k;
    }
    if (out.posterior_K(k) > best_post) {
      best_post = out.posterior_K(k);
      out.K_hat_1 = k;
    }
  }
  return out;
}

}  // namespace treecpd
