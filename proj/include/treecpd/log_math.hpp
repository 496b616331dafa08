#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

namespace treecpd {

// Values that live in log-space. A LogValue of -inf is probability zero.
using LogValue = double;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/* log(e^a + e^b) */
inline double log_add_exp(double a, double b) noexcept {
  if (a < b) std::swap(a, b);
  if (b == kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

// Two-pass log-sum-exp with a fixed reduction order.
inline double log_sum_exp(std::span<const double> xs) noexcept {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf || !std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

// Streaming accumulator for log-sum-exp when the terms are produced one by
// one. Rescales on the fly so a single pass suffices.
class LogSumAccumulator {
 public:
  void add(double x) noexcept {
    if (x == kNegInf) return;
    if (x <= max_) {
      sum_ += std::exp(x - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - x) + 1.0;
      max_ = x;
    }
  }
  double value() const noexcept {
    return max_ == kNegInf ? kNegInf : max_ + std::log(sum_);
  }

 private:
  double max_ = kNegInf;
  double sum_ = 0.0;
};

/* log(1 - e^x) for x <= 0, accurate on both ends. */
inline double log1m_exp(double x) noexcept {
  if (x > 0.0) return std::numeric_limits<double>::quiet_NaN();
  if (x > -std::numbers::ln2) return std::log(-std::expm1(x));
  return std::log1p(-std::exp(x));
}

}  // namespace treecpd
