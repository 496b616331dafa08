#pragma once

// Structure-level posteriors through time: instant edge probabilities
// integrated over segmentations, and edge-status / whole-structure
// comparisons under a fixed segmentation.

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "treecpd/errors.hpp"
#include "treecpd/log_math.hpp"
#include "treecpd/segment_likelihood.hpp"
#include "treecpd/segmentation_dp.hpp"
#include "treecpd/tree_algebra.hpp"

namespace treecpd {

struct EdgeTimeTensor {
  Index K = 0;
  std::vector<Eigen::MatrixXd> probs;  // probs[t], t = 1..N; probs[0] unused
  double skipped_mass = 0.0;           // max over t of the S_K mass left out
  Index evaluated_segments = 0;
  std::vector<std::string> warnings;
};

// p_ij^K(t) = sum_{r containing t} S_K(r) P({i,j} in T | y^r). Segments with
// S_K(r) below `mass_floor` are not evaluated; their mass is reported.
inline EdgeTimeTensor edge_prob_over_time(const SegmentPosterior& seg_post, const SegmentModel& model,
                                          double mass_floor = 1e-12, int threads = 1) {
  const Index n = seg_post.length();
  const Index p = model.dim();
  if (model.length() != n) throw ConfigError("segment posterior and model disagree on N");
  EdgeTimeTensor out;
  out.K = seg_post.K();
  out.probs.assign(static_cast<size_t>(n + 1), Eigen::MatrixXd::Zero(p, p));
  std::vector<std::pair<Index, Index>> kept;
  Eigen::VectorXd skipped = Eigen::VectorXd::Zero(n + 2);
  for (Index s = 1; s <= n; ++s)
    for (Index t = s + 1; t <= n + 1; ++t) {
      const double w = seg_post(s, t);
      if (w <= 0.0) continue;
      if (w >= mass_floor) {
        kept.emplace_back(s, t);
      } else {
        for (Index u = s; u < t; ++u) skipped(u) += w;
      }
    }
  std::vector<Eigen::MatrixXd> edge(kept.size());
  parallel_for(static_cast<Index>(kept.size()), threads, [&](Index k) {
    const auto [s, t] = kept[static_cast<size_t>(k)];
    edge[static_cast<size_t>(k)] = model.segment_edge_posterior(s, t);
  });
  for (size_t k = 0; k < kept.size(); ++k) {
    const auto [s, t] = kept[k];
    const double w = seg_post(s, t);
    for (Index u = s; u < t; ++u) out.probs[static_cast<size_t>(u)] += w * edge[k];
  }
  out.evaluated_segments = static_cast<Index>(kept.size());
  out.skipped_mass = skipped.maxCoeff();
  if (out.skipped_mass > 1e-6) {
    std::ostringstream os;
    os << "edge-time sweep skipped posterior segment mass up to " << out.skipped_mass
       << " at some time-point (mass floor " << mass_floor << ")";
    out.warnings.push_back(os.str());
  }
  return out;
}

// Prior probabilities of (always absent, mixed, always present).
struct StatusTriple {
  double absent = 0.0;
  double mixed = 0.0;
  double present = 0.0;

  double sum() const { return absent + mixed + present; }
};

inline void validate_status_prior(const StatusTriple& lambda) {
  if (!(lambda.absent > 0.0 && lambda.mixed > 0.0 && lambda.present > 0.0))
    throw ConfigError("edge-status prior components must all be > 0");
  if (std::abs(lambda.sum() - 1.0) > 1e-9) throw ConfigError("edge-status prior must sum to 1");
}

struct EdgeStatusPosterior {
  Index i = 0;
  Index j = 0;
  StatusTriple lambda;
  StatusTriple prior_q;      // (q0-, q0bar, q0+)
  StatusTriple posterior_q;  // (q-, qbar, q+)
  StatusTriple posterior;    // P(eps = -1, 0, +1 | y)
};

struct EdgeStatusResult {
  std::vector<EdgeStatusPosterior> edges;  // i < j, row-major
  bool trivial = false;
  std::vector<std::string> warnings;
};

// Validates change-points and returns boundaries 1 = tau_0 < ... < tau_K = N+1.
inline std::vector<Index> segmentation_boundaries(const std::vector<Index>& change_points, Index n) {
  std::vector<Index> b{1};
  for (Index c : change_points) {
    if (c <= b.back() || c > n) {
      std::ostringstream os;
      os << "malformed segmentation: change-points must be strictly increasing within 2.." << n;
      throw ConfigError(os.str());
    }
    b.push_back(c);
  }
  b.push_back(n + 1);
  return b;
}

namespace detail {

inline double one_minus_two(double log_a, double log_b) {
  return std::max(0.0, 1.0 - std::exp(log_a) - std::exp(log_b));
}

inline double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

}  // namespace detail

// Posterior of eps_ij in {-1, 0, +1} for every edge under a fixed segmentation.
inline EdgeStatusResult edge_status_comparison(const SegmentModel& model, const std::vector<Index>& change_points,
                                               const StatusTriple& lambda) {
  validate_status_prior(lambda);
  const auto bounds = segmentation_boundaries(change_points, model.length());
  const Index K = static_cast<Index>(bounds.size()) - 1;
  const Index p = model.dim();
  EdgeStatusResult out;
  out.trivial = K == 1;
  if (out.trivial)
    out.warnings.push_back("single segment: edge-status comparison is trivial (mixed status impossible)");

  const auto prior = edge_posterior(model.edge_prior());
  std::vector<Eigen::MatrixXd> seg_log_prob;
  for (Index k = 0; k < K; ++k)
    seg_log_prob.push_back(edge_posterior(model.log_omega(bounds[static_cast<size_t>(k)],
                                                          bounds[static_cast<size_t>(k + 1)]))
                               .log_edge_prob);

  const double kd = static_cast<double>(K);
  for (Index i = 0; i < p; ++i)
    for (Index j = i + 1; j < p; ++j) {
      EdgeStatusPosterior e;
      e.i = i;
      e.j = j;
      e.lambda = lambda;
      const double lp0 = prior.log_edge_prob(i, j);
      const double lq0_plus = kd * lp0;
      const double lq0_minus = kd * log1m_exp(lp0);
      double lq_plus = 0.0;
      double lq_minus = 0.0;
      for (const auto& lp : seg_log_prob) {
        lq_plus += lp(i, j);
        lq_minus += log1m_exp(lp(i, j));
      }
      const double q0_mixed = out.trivial ? 0.0 : detail::one_minus_two(lq0_plus, lq0_minus);
      const double q_mixed = out.trivial ? 0.0 : detail::one_minus_two(lq_plus, lq_minus);
      e.prior_q = {std::exp(lq0_minus), q0_mixed, std::exp(lq0_plus)};
      e.posterior_q = {std::exp(lq_minus), q_mixed, std::exp(lq_plus)};

      // An event that is impossible a priori gets zero posterior mass.
      auto term = [](double log_lambda, double lq, double lq0) {
        return lq0 == kNegInf ? kNegInf : log_lambda + lq - lq0;
      };
      const std::array<double, 3> terms{
          term(std::log(lambda.absent), lq_minus, lq0_minus),
          term(std::log(lambda.mixed), detail::safe_log(q_mixed), detail::safe_log(q0_mixed)),
          term(std::log(lambda.present), lq_plus, lq0_plus)};
      const double norm = log_sum_exp(terms);
      if (!std::isfinite(norm)) {
        std::ostringstream os;
        os << "edge-status posterior is undefined for edge (" << i + 1 << ", " << j + 1 << ")";
        throw NumericalError(os.str());
      }
      e.posterior = {std::exp(terms[0] - norm), std::exp(terms[1] - norm), std::exp(terms[2] - norm)};
      out.edges.push_back(e);
    }
  return out;
}

struct StructureComparisonPosterior {
  double pi = 0.5;
  double pi_star = 1.0;
  double log_q0 = 0.0;  // log P(all K trees identical)
  double log_q = 0.0;   // log P(all K trees identical | y)
  bool trivial = false;
  std::vector<std::string> warnings;
};

// q0 = Z(b^K) / Z(b)^K and q = Z(prod_k omega_k) / prod_k Z(omega_k).
inline StructureComparisonPosterior structure_comparison(const SegmentModel& model,
                                                         const std::vector<Index>& change_points, double pi) {
  if (!(pi > 0.0 && pi < 1.0)) throw ConfigError("structure prior pi must lie in (0, 1)");
  const auto bounds = segmentation_boundaries(change_points, model.length());
  const Index K = static_cast<Index>(bounds.size()) - 1;
  StructureComparisonPosterior out;
  out.pi = pi;

  const auto& b = model.edge_prior();
  out.log_q0 = log_tree_partition(elementwise_power(b, static_cast<int>(K))) -
               static_cast<double>(K) * model.log_Z_prior();
  std::vector<EdgeWeightMatrix> omegas;
  double sum_log_z = 0.0;
  for (Index k = 0; k < K; ++k) {
    omegas.push_back(model.log_omega(bounds[static_cast<size_t>(k)], bounds[static_cast<size_t>(k + 1)]));
    sum_log_z += log_tree_partition(omegas.back());
  }
  out.log_q = log_tree_partition(elementwise_product(omegas)) - sum_log_z;
  out.log_q0 = std::min(0.0, out.log_q0);
  out.log_q = std::min(0.0, out.log_q);

  if (K == 1 || model.dim() == 2) {
    out.trivial = true;
    out.pi_star = 1.0;
    out.warnings.push_back(K == 1 ? "single segment: structure comparison is trivial"
                                  : "p = 2: only one spanning tree exists, structure comparison is trivial");
    return out;
  }
  const double a = std::log(pi) + out.log_q - out.log_q0;
  const double c = std::log1p(-pi) + log1m_exp(out.log_q) - log1m_exp(out.log_q0);
  out.pi_star = std::exp(a - log_add_exp(a, c));
  return out;
}

}  // namespace treecpd
