#pragma once

// Sums over the spanning trees of the complete graph on p vertices.
//
// The partition function Z(w) = sum_T prod_{ij in T} w_ij is the determinant
// of any (p-1)-principal minor of the weighted Laplacian. We factor the
// grounded Laplacian by eliminating one vertex at a time: eliminating k turns
// the graph into the Schur complement with weights w_ij + w_ik w_kj / deg_k,
// and the pivot is deg_k. Every step only adds, multiplies and divides
// positive numbers, so the log-space recursion has no cancellation no matter
// how spread out the weights are.

#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "treecpd/errors.hpp"
#include "treecpd/log_math.hpp"

namespace treecpd {

using Eigen::Index;

// Symmetric matrix of strictly positive edge weights stored as logs. The
// diagonal is ignored.
class EdgeWeightMatrix {
 public:
  EdgeWeightMatrix() = default;

  explicit EdgeWeightMatrix(Eigen::MatrixXd log_w) : log_w_(std::move(log_w)) {
    const Index p = log_w_.rows();
    if (p < 2 || log_w_.cols() != p) throw ConfigError("edge weight matrix must be p x p with p >= 2");
    for (Index i = 0; i < p; ++i) {
      log_w_(i, i) = 0.0;
      for (Index j = 0; j < i; ++j) {
        if (!std::isfinite(log_w_(i, j)) || !std::isfinite(log_w_(j, i))) {
          std::ostringstream os;
          os << "edge weight (" << j + 1 << ", " << i + 1 << ") must be strictly positive and finite";
          throw ConfigError(os.str());
        }
        if (log_w_(i, j) != log_w_(j, i)) {
          std::ostringstream os;
          os << "edge weight matrix is not symmetric at (" << j + 1 << ", " << i + 1 << ")";
          throw ConfigError(os.str());
        }
      }
    }
  }

  static EdgeWeightMatrix uniform(Index p) { return EdgeWeightMatrix(Eigen::MatrixXd::Zero(p, p)); }

  static EdgeWeightMatrix from_weights(const Eigen::MatrixXd& w) {
    const Index p = w.rows();
    Eigen::MatrixXd lw = Eigen::MatrixXd::Zero(p, w.cols());
    for (Index i = 0; i < p; ++i)
      for (Index j = 0; j < w.cols(); ++j)
        if (i != j) lw(i, j) = w(i, j) > 0.0 ? std::log(w(i, j)) : kNegInf;
    return EdgeWeightMatrix(std::move(lw));
  }

  Index dim() const { return log_w_.rows(); }
  double log_weight(Index i, Index j) const { return log_w_(i, j); }
  const Eigen::MatrixXd& log_weights() const { return log_w_; }

  double max_log_weight() const {
    double m = kNegInf;
    for (Index i = 0; i < dim(); ++i)
      for (Index j = 0; j < i; ++j) m = std::max(m, log_w_(i, j));
    return m;
  }

 private:
  Eigen::MatrixXd log_w_;
};

struct TreeDistributionSummary {
  LogValue log_Z = kNegInf;
  Eigen::MatrixXd edge_prob;      // symmetric, zero diagonal
  Eigen::MatrixXd log_edge_prob;  // log of edge_prob, -inf on the diagonal
};

namespace detail {

// Factorization of the Laplacian grounded at `ground`, eliminating the other
// vertices in increasing index order. `log_pivot[k]` is the log-degree of the
// k-th eliminated vertex; `log_factor(m, k)` is log(-L_mk) for positions m > k.
struct GroundedFactor {
  std::vector<Index> order;
  std::vector<double> log_pivot;
  Eigen::MatrixXd log_factor;
};

inline GroundedFactor factor_grounded(const Eigen::MatrixXd& scaled_log_w, Index ground,
                                      bool keep_factor) {
  const Index p = scaled_log_w.rows();
  GroundedFactor f;
  for (Index v = 0; v < p; ++v)
    if (v != ground) f.order.push_back(v);
  f.order.push_back(ground);
  const Index m = p - 1;
  // Work in elimination-order coordinates; the ground sits at position m.
  Eigen::MatrixXd w(p, p);
  for (Index a = 0; a < p; ++a)
    for (Index b = 0; b < p; ++b) w(a, b) = a == b ? kNegInf : scaled_log_w(f.order[a], f.order[b]);
  f.log_pivot.resize(static_cast<size_t>(m));
  if (keep_factor) f.log_factor = Eigen::MatrixXd::Constant(m, m, kNegInf);
  for (Index k = 0; k < m; ++k) {
    LogSumAccumulator deg;
    for (Index j = k + 1; j < p; ++j) deg.add(w(k, j));
    const double log_deg = deg.value();
    if (!std::isfinite(log_deg)) {
      std::ostringstream os;
      os << "spanning-tree elimination failed: vertex " << f.order[k] + 1
         << " has no positive-weight connection left (log-degree " << log_deg << ")";
      throw NumericalError(os.str());
    }
    f.log_pivot[static_cast<size_t>(k)] = log_deg;
    if (keep_factor)
      for (Index a = k + 1; a < m; ++a) f.log_factor(a, k) = w(a, k) - log_deg;
    for (Index a = k + 1; a < p; ++a) {
      const double wa = w(a, k) - log_deg;
      for (Index b = a + 1; b < p; ++b) {
        const double updated = log_add_exp(w(a, b), wa + w(b, k));
        w(a, b) = updated;
        w(b, a) = updated;
      }
    }
  }
  return f;
}

}  // namespace detail

// log sum_T prod w_ij, via the Laplacian minor that deletes the last vertex.
inline LogValue log_tree_partition(const EdgeWeightMatrix& w) {
  const Index p = w.dim();
  const double shift = w.max_log_weight();
  Eigen::MatrixXd scaled = w.log_weights().array() - shift;
  const auto f = detail::factor_grounded(scaled, p - 1, false);
  double log_det = 0.0;
  for (double piv : f.log_pivot) log_det += piv;
  return log_det + static_cast<double>(p - 1) * shift;
}

// Posterior edge probabilities of P(T) proportional to prod w.
//
// P({i,j} in T) = w_ij * R_ij with R_ij the effective resistance between i
// and j. R_ij is the (i,i) entry of the inverse of the Laplacian grounded at
// j, which we read off L^-T D^-1 L^-1 where L^-1 has non-negative entries.
// Grounding at one endpoint of every pair avoids the Q_ii + Q_jj - 2 Q_ij
// cancellation of the single-inverse formula. Cost is O(p^4).
inline TreeDistributionSummary edge_posterior(const EdgeWeightMatrix& w) {
  const Index p = w.dim();
  const double shift = w.max_log_weight();
  Eigen::MatrixXd scaled = w.log_weights().array() - shift;
  TreeDistributionSummary out;
  out.edge_prob = Eigen::MatrixXd::Zero(p, p);
  out.log_edge_prob = Eigen::MatrixXd::Constant(p, p, kNegInf);

  for (Index g = p - 1; g >= 1; --g) {
    const auto f = detail::factor_grounded(scaled, g, true);
    const Index m = p - 1;
    if (g == p - 1) {
      double log_det = 0.0;
      for (double piv : f.log_pivot) log_det += piv;
      out.log_Z = log_det + static_cast<double>(p - 1) * shift;
    }
    // Only vertices i < g are needed; they occupy positions 0..g-1.
    // x(a, k) = log (L^-1)_{a k} for a >= k.
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(m, g, kNegInf);
    for (Index k = 0; k < g; ++k) {
      x(k, k) = 0.0;
      for (Index a = k + 1; a < m; ++a) {
        LogSumAccumulator acc;
        for (Index j = k; j < a; ++j) acc.add(f.log_factor(a, j) + x(j, k));
        x(a, k) = acc.value();
      }
    }
    for (Index i = 0; i < g; ++i) {
      LogSumAccumulator resistance;
      for (Index a = i; a < m; ++a) resistance.add(2.0 * x(a, i) - f.log_pivot[static_cast<size_t>(a)]);
      const double lp = std::min(0.0, scaled(i, g) + resistance.value());
      out.log_edge_prob(i, g) = out.log_edge_prob(g, i) = lp;
      out.edge_prob(i, g) = out.edge_prob(g, i) = std::exp(lp);
    }
  }
  return out;
}

inline EdgeWeightMatrix elementwise_power(const EdgeWeightMatrix& w, int k) {
  if (k < 1) throw ConfigError("element-wise power needs K >= 1");
  return EdgeWeightMatrix(w.log_weights() * static_cast<double>(k));
}

inline EdgeWeightMatrix elementwise_product(const std::vector<EdgeWeightMatrix>& ws) {
  if (ws.empty()) throw ConfigError("element-wise product of an empty list");
  Eigen::MatrixXd acc = ws.front().log_weights();
  for (size_t k = 1; k < ws.size(); ++k) {
    if (ws[k].dim() != ws.front().dim()) throw ConfigError("element-wise product: dimension mismatch");
    acc += ws[k].log_weights();
  }
  return EdgeWeightMatrix(std::move(acc));
}

}  // namespace treecpd
