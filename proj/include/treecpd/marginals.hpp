#pragma once

// Conjugate Gaussian marginal likelihoods of index blocks over time segments.
//
// Segments use 1-based half-open boundaries [s, t) with 1 <= s < t <= N+1.
// Prior: Sigma ~ Inverse-Wishart(alpha, phi) on the full p-dimensional
// covariance (equivalently Lambda ~ Wishart(alpha, phi^-1)), so a block D of
// size d has Sigma_DD ~ Inverse-Wishart(alpha - p + d, phi_DD). Every block
// marginal is therefore a marginal of one coherent p-dimensional prior.

#include <cmath>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "treecpd/errors.hpp"
#include "treecpd/log_math.hpp"

namespace treecpd {

using Eigen::Index;

struct Dataset {
  Eigen::MatrixXd values;  // N x p, row = time-point
  std::string replicate_id;
  std::vector<std::string> variable_names;

  Index length() const { return values.rows(); }
  Index dim() const { return values.cols(); }
};

// Rejects N < 2, p < 2 and non-finite entries (reported 1-based).
inline void validate_dataset(const Dataset& data) {
  if (data.length() < 2) throw IngestionError("dataset needs at least 2 time-points");
  if (data.dim() < 2) throw IngestionError("dataset needs at least 2 variables");
  if (!data.variable_names.empty() &&
      static_cast<Index>(data.variable_names.size()) != data.dim())
    throw IngestionError("variable_names size does not match column count");
  for (Index r = 0; r < data.length(); ++r)
    for (Index c = 0; c < data.dim(); ++c)
      if (!std::isfinite(data.values(r, c))) {
        std::ostringstream os;
        os << "non-finite value at row " << r + 1 << ", column " << c + 1;
        throw IngestionError(os.str());
      }
}

enum class MeanMode { zero, unknown };
enum class Backend { tree, full };

struct PriorSpec {
  double alpha = 0.0;
  Eigen::MatrixXd phi;
  MeanMode mean_mode = MeanMode::zero;
  double kappa0 = 1.0;
  Eigen::VectorXd mu0;  // empty means zero vector
  Backend backend = Backend::tree;
  double temper_alpha = 1.0;

  Index dim() const { return phi.rows(); }

  // alpha = p + 10, phi = (alpha - p - 1) I: prior mean of Sigma is I.
  static PriorSpec standard(Index p) {
    PriorSpec prior;
    prior.alpha = static_cast<double>(p) + 10.0;
    prior.phi = Eigen::MatrixXd::Identity(p, p) * (prior.alpha - static_cast<double>(p) - 1.0);
    return prior;
  }

  void validate() const {
    const Index p = dim();
    if (p < 1 || phi.cols() != p) throw ConfigError("prior phi must be a square matrix");
    if (!((phi - phi.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + phi.cwiseAbs().maxCoeff())))
      throw ConfigError("prior phi must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(phi, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 0.0))
      throw ConfigError("prior phi must be positive definite");
    if (!(alpha > static_cast<double>(p) - 1.0)) {
      std::ostringstream os;
      os << "prior alpha must exceed p - 1 = " << p - 1 << " (got " << alpha << ")";
      throw ConfigError(os.str());
    }
    if (!(temper_alpha >= 1.0)) throw ConfigError("temper_alpha must be >= 1");
    if (mean_mode == MeanMode::unknown) {
      if (!(kappa0 > 0.0)) throw ConfigError("kappa0 must be > 0");
      if (mu0.size() != 0 && mu0.size() != p) throw ConfigError("mu0 must have p entries");
    }
  }
};

struct SegmentStats {
  Index n = 0;
  Eigen::VectorXd s_vec;  // sum of y^t
  Eigen::MatrixXd s_mat;  // sum of y^t (y^t)^T
  Index begin = 0;        // [begin, end), 1-based; 0 when unknown
  Index end = 0;
};

// Prefix sufficient statistics: prefix k covers the first k rows.
class CumulativeStats {
 public:
  explicit CumulativeStats(const Dataset& data) : n_(data.length()), p_(data.dim()) {
    validate_dataset(data);
    sum_.assign(static_cast<size_t>((n_ + 1) * p_), 0.0);
    outer_.assign(static_cast<size_t>((n_ + 1) * p_ * p_), 0.0);
    for (Index r = 0; r < n_; ++r) {
      const double* prev_sum = &sum_[static_cast<size_t>(r * p_)];
      double* next_sum = &sum_[static_cast<size_t>((r + 1) * p_)];
      const double* prev_outer = &outer_[static_cast<size_t>(r * p_ * p_)];
      double* next_outer = &outer_[static_cast<size_t>((r + 1) * p_ * p_)];
      for (Index i = 0; i < p_; ++i) {
        const double yi = data.values(r, i);
        next_sum[i] = prev_sum[i] + yi;
        for (Index j = 0; j < p_; ++j)
          next_outer[i * p_ + j] = prev_outer[i * p_ + j] + yi * data.values(r, j);
      }
    }
  }

  Index length() const { return n_; }
  Index dim() const { return p_; }

  void check_segment(Index s, Index t) const {
    if (!(1 <= s && s < t && t <= n_ + 1)) {
      std::ostringstream os;
      os << "invalid segment [" << s << ", " << t << ") for N = " << n_;
      throw ConfigError(os.str());
    }
  }

  double sum(Index s, Index t, Index i) const {
    return sum_[static_cast<size_t>((t - 1) * p_ + i)] - sum_[static_cast<size_t>((s - 1) * p_ + i)];
  }
  double outer(Index s, Index t, Index i, Index j) const {
    return outer_[static_cast<size_t>(((t - 1) * p_ + i) * p_ + j)] -
           outer_[static_cast<size_t>(((s - 1) * p_ + i) * p_ + j)];
  }

  SegmentStats segment(Index s, Index t) const {
    check_segment(s, t);
    SegmentStats out;
    out.n = t - s;
    out.begin = s;
    out.end = t;
    out.s_vec.resize(p_);
    out.s_mat.resize(p_, p_);
    for (Index i = 0; i < p_; ++i) {
      out.s_vec(i) = sum(s, t, i);
      for (Index j = 0; j < p_; ++j) out.s_mat(i, j) = outer(s, t, i, j);
    }
    return out;
  }

 private:
  Index n_;
  Index p_;
  std::vector<double> sum_;
  std::vector<double> outer_;
};

inline CumulativeStats prefix_stats(const Dataset& data) { return CumulativeStats(data); }

inline SegmentStats segment_stats(const CumulativeStats& cum, Index s, Index t) {
  return cum.segment(s, t);
}

// log Gamma_d(x) = d(d-1)/4 log(pi) + sum_{j=1..d} lgamma(x - (j-1)/2).
inline double log_multivariate_gamma(int d, double x) {
  if (d < 1) throw ConfigError("multivariate gamma dimension must be >= 1");
  if (!(x > 0.5 * (d - 1))) {
    std::ostringstream os;
    os << "multivariate gamma pole: d = " << d << ", x = " << x;
    throw ConfigError(os.str());
  }
  double out = 0.25 * d * (d - 1) * std::log(std::numbers::pi);
  for (int j = 1; j <= d; ++j) out += std::lgamma(x - 0.5 * (j - 1));
  return out;
}

namespace detail {

inline std::string describe_block(std::span<const int> block) {
  std::ostringstream os;
  os << "{";
  for (size_t k = 0; k < block.size(); ++k) os << (k ? "," : "") << block[k] + 1;
  os << "}";
  return os.str();
}

}  // namespace detail

// Conjugate marginal for one fixed block. Holds everything that does not
// depend on the segment so the per-segment cost is one d x d log-determinant.
class BlockMarginal {
 public:
  BlockMarginal(const PriorSpec& prior, std::vector<int> block)
      : block_(std::move(block)), mean_mode_(prior.mean_mode), kappa0_(prior.kappa0) {
    const Index p = prior.dim();
    d_ = static_cast<int>(block_.size());
    if (d_ < 1 || d_ > p) throw ConfigError("block size must be within 1..p");
    for (size_t a = 0; a < block_.size(); ++a) {
      if (block_[a] < 0 || block_[a] >= p) throw ConfigError("block index out of range");
      for (size_t b = 0; b < a; ++b)
        if (block_[a] == block_[b]) throw ConfigError("block indices must be distinct");
    }
    nu_ = prior.alpha - static_cast<double>(p) + d_;
    psi_.resize(d_, d_);
    mu0_ = Eigen::VectorXd::Zero(d_);
    for (int a = 0; a < d_; ++a) {
      for (int b = 0; b < d_; ++b) psi_(a, b) = prior.phi(block_[a], block_[b]);
      if (prior.mu0.size() == p) mu0_(a) = prior.mu0(block_[a]);
    }
    const double logdet_psi = log_det_pd(psi_);
    if (!std::isfinite(logdet_psi)) throw ConfigError("prior phi block is not positive definite");
    half_nu_logdet_psi_ = 0.5 * nu_ * logdet_psi;
    log_gamma_prior_ = log_multivariate_gamma(d_, 0.5 * nu_);
  }

  int size() const { return d_; }
  double degrees_of_freedom() const { return nu_; }
  const std::vector<int>& block() const { return block_; }

  // Fills the n-dependent constant for n = 1..max_n. Results are unchanged.
  void precompute(Index max_n) {
    constant_by_n_.resize(static_cast<size_t>(max_n + 1));
    for (Index n = 1; n <= max_n; ++n) constant_by_n_[static_cast<size_t>(n)] = constant(n);
  }

  LogValue operator()(const SegmentStats& stats) const {
    const Index n = stats.n;
    if (n < 1) throw ConfigError("segment must contain at least one observation");
    const double c = n < static_cast<Index>(constant_by_n_.size())
                         ? constant_by_n_[static_cast<size_t>(n)]
                         : constant(n);
    double logdet_post = 0.0;
    if (mean_mode_ == MeanMode::zero && d_ <= 2) {
      // Scalar paths for vertex and edge blocks.
      const int i = block_[0];
      const double a = psi_(0, 0) + stats.s_mat(i, i);
      if (d_ == 1) {
        logdet_post = a > 0.0 ? std::log(a) : kNegInf;
      } else {
        const int j = block_[1];
        const double b = psi_(0, 1) + stats.s_mat(i, j);
        const double e = psi_(1, 1) + stats.s_mat(j, j);
        const double det = a * e - b * b;
        logdet_post = (a > 0.0 && det > 0.0) ? std::log(det) : kNegInf;
      }
    } else {
      Eigen::MatrixXd post(d_, d_);
      for (int a = 0; a < d_; ++a)
        for (int b = 0; b < d_; ++b) post(a, b) = psi_(a, b) + stats.s_mat(block_[a], block_[b]);
      if (mean_mode_ == MeanMode::unknown) {
        const double nd = static_cast<double>(n);
        Eigen::VectorXd ybar(d_);
        for (int a = 0; a < d_; ++a) ybar(a) = stats.s_vec(block_[a]) / nd;
        const Eigen::VectorXd diff = ybar - mu0_;
        post.noalias() -= nd * ybar * ybar.transpose();
        post.noalias() += (kappa0_ * nd / (kappa0_ + nd)) * diff * diff.transpose();
      }
      logdet_post = log_det_pd(post);
    }
    if (!std::isfinite(logdet_post)) {
      std::ostringstream os;
      os << "posterior scale matrix is not positive definite for block "
         << detail::describe_block(block_);
      if (stats.end > 0) os << " on segment [" << stats.begin << ", " << stats.end << ")";
      throw NumericalError(os.str());
    }
    return c + half_nu_logdet_psi_ - 0.5 * (nu_ + static_cast<double>(n)) * logdet_post;
  }

 private:
  double constant(Index n) const {
    const double nd = static_cast<double>(n);
    double c = -0.5 * nd * d_ * std::log(std::numbers::pi) +
               log_multivariate_gamma(d_, 0.5 * (nu_ + nd)) - log_gamma_prior_;
    if (mean_mode_ == MeanMode::unknown) c += 0.5 * d_ * std::log(kappa0_ / (kappa0_ + nd));
    return c;
  }

  static double log_det_pd(const Eigen::MatrixXd& m) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) return kNegInf;
    const auto diag = llt.matrixLLT().diagonal();
    double out = 0.0;
    for (Index k = 0; k < diag.size(); ++k) {
      if (!(diag(k) > 0.0)) return kNegInf;
      out += 2.0 * std::log(diag(k));
    }
    return out;
  }

  std::vector<int> block_;
  int d_ = 0;
  double nu_ = 0.0;
  Eigen::MatrixXd psi_;
  Eigen::VectorXd mu0_;
  MeanMode mean_mode_;
  double kappa0_;
  double half_nu_logdet_psi_ = 0.0;
  double log_gamma_prior_ = 0.0;
  std::vector<double> constant_by_n_;
};

inline LogValue log_block_marginal(const SegmentStats& stats, std::span<const int> block,
                                   const PriorSpec& prior) {
  return BlockMarginal(prior, std::vector<int>(block.begin(), block.end()))(stats);
}

// Tempered joint marginal over replicates sharing one structure:
// (1 / temper_alpha) * sum_u log m(stats_u).
inline LogValue joint_log_block_marginal(std::span<const SegmentStats> stats_list,
                                         std::span<const int> block, const PriorSpec& prior) {
  if (stats_list.empty()) throw ConfigError("joint marginal needs at least one replicate");
  if (!(prior.temper_alpha >= 1.0)) throw ConfigError("temper_alpha must be >= 1");
  const BlockMarginal marginal(prior, std::vector<int>(block.begin(), block.end()));
  double total = 0.0;
  for (const auto& stats : stats_list) total += marginal(stats);
  return total / prior.temper_alpha;
}

struct DataDrivenPrior {
  PriorSpec prior;
  Dataset centered;
};

// Centers every column and sets phi = (alpha - p - 1) * sample covariance
// (divisor N - 1), so the prior mean of Sigma is the sample covariance.
inline DataDrivenPrior data_driven_prior(const Dataset& data, double alpha) {
  validate_dataset(data);
  const Index n = data.length();
  const Index p = data.dim();
  DataDrivenPrior out;
  out.centered = data;
  const Eigen::RowVectorXd mean = data.values.colwise().mean();
  out.centered.values.rowwise() -= mean;
  const Eigen::MatrixXd cov =
      (out.centered.values.transpose() * out.centered.values) / static_cast<double>(n - 1);
  for (Index c = 0; c < p; ++c) {
    if (!(cov(c, c) > 0.0)) {
      std::ostringstream os;
      os << "column " << c + 1 << " is constant: sample covariance is singular";
      throw IngestionError(os.str());
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  const Eigen::VectorXd pivots = ldlt.vectorD();
  const double scale = pivots.cwiseAbs().maxCoeff();
  for (Index k = 0; k < p; ++k) {
    if (!(pivots(k) > 1e-12 * scale)) {
      // Permutation maps the failing pivot back to an original column.
      Eigen::VectorXi order = Eigen::VectorXi::LinSpaced(p, 0, static_cast<int>(p - 1));
      order = ldlt.transpositionsP() * order;
      std::ostringstream os;
      os << "sample covariance is singular: column " << order(k) + 1
         << " is a linear combination of the others";
      throw IngestionError(os.str());
    }
  }
  if (!(alpha > static_cast<double>(p) + 1.0))
    throw ConfigError("data-driven prior needs alpha > p + 1");
  out.prior.alpha = alpha;
  out.prior.phi = (alpha - static_cast<double>(p) - 1.0) * cov;
  out.prior.mean_mode = MeanMode::zero;
  return out;
}

}  // namespace treecpd
